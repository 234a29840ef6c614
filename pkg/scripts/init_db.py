#!/usr/bin/env python3
"""
Script to initialize the run archive database.
"""
import os
import sys
import argparse

# Add the project root to the Python path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from flask import Flask
from src.database import database_uri_for, db
from src.models.analysis_run import AnalysisRun, SecondRecord


def init_db(path=None, drop_all=False):
    """
    Create a Flask app and initialize the run archive.

    Args:
        path: Database file or SQLAlchemy URI; defaults to TBQKD_DATABASE_URI or ./qkd_runs.db
        drop_all: If True, drops all tables before creating them
    """
    app = Flask(__name__)
    app.config["SQLALCHEMY_DATABASE_URI"] = database_uri_for(path)
    app.config["SQLALCHEMY_TRACK_MODIFICATIONS"] = False
    db.init_app(app)

    with app.app_context():
        if drop_all:
            print("Dropping all tables...")
            db.drop_all()

        db.create_all()
        print(f"Database initialized at {app.config['SQLALCHEMY_DATABASE_URI']}")

        run_count = db.session.query(db.func.count(AnalysisRun.id)).scalar()
        second_count = db.session.query(db.func.count(SecondRecord.id)).scalar()
        print("Database contains:")
        print(f"  - {run_count} archived analysis runs")
        print(f"  - {second_count} per-second rows")


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description='Initialize the QKD run archive.')
    parser.add_argument('--db', help='Database file or SQLAlchemy URI')
    parser.add_argument('--drop', action='store_true', help='Drop all tables before creating them')
    args = parser.parse_args()

    init_db(args.db, args.drop)
