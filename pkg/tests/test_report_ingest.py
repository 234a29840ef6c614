"""
Tests for validating centroid and tomography count files row by row.
"""
import os
import sys
import tempfile
import unittest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.errors import FileFormatError
from src.schemas.record_schemas import CountsRowSchema
from src.services.channel_model import CentroidSample
from src.services.polarization_tomography import SixStateCounts
from src.services.report_ingest import load_centroid_file, load_counts_file, process_rows
from src.store.text_reports import COUNTS_COLUMNS


class TestProcessRows(unittest.TestCase):

    def test_valid_and_invalid_rows(self):
        text = ("second,H,V,D,A,R,L,integration\n"
                "0,900,100,500,500,500,500,1.0\n"
                "1,-5,100,500,500,500,500,1.0\n"
                "2,0,0,500,500,500,500,1.0\n"
                "3,10,10,10,10,10,10,\n")
        message, items, errors = process_rows(text, CountsRowSchema, COUNTS_COLUMNS)
        self.assertEqual(len(items), 1)
        self.assertIsInstance(items[0], SixStateCounts)
        self.assertEqual(items[0].H, 900)
        self.assertEqual([e["row"] for e in errors], [3, 4, 5])
        self.assertIn("H", errors[0]["errors"])
        self.assertIn("Found 3 row(s) with validation errors.", message)

    def test_wrong_header(self):
        with self.assertRaises(FileFormatError):
            process_rows("second,H,V\n0,1,2\n", CountsRowSchema, COUNTS_COLUMNS)


class TestLoaders(unittest.TestCase):

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = self._tmp.name

    def tearDown(self):
        self._tmp.cleanup()

    def write(self, name, text):
        path = os.path.join(self.tmp, name)
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
        return path

    def test_centroid_file(self):
        path = self.write("centroids.csv", "# format_version = 1\nt,theta_x,theta_y\n0.0,1e-6,-2e-6\n0.05,3e-6,0\n")
        samples = load_centroid_file(path)
        self.assertEqual(samples[1], CentroidSample(0.05, 3e-6, 0.0))

    def test_counts_file(self):
        path = self.write("counts.csv", "second,H,V,D,A,R,L,integration\n4,1,2,3,4,5,6,2.5\n")
        counts = load_counts_file(path)
        self.assertEqual(counts[0].second_index, 4)
        self.assertEqual(counts[0].integration, 2.5)

    def test_file_with_only_bad_rows(self):
        path = self.write("bad.csv", "t,theta_x,theta_y\n-1,0,0\nx,0,0\n")
        with self.assertRaises(FileFormatError):
            load_centroid_file(path)


if __name__ == '__main__':
    unittest.main()
