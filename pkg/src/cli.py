"""
Command-line entry points.

    simulate      simulate a run into a directory of time-tag and text files
    analyze       per-second report, histogram and sifted keys of a run
    characterize  r0, Cn2 and fluctuation statistics from centroids or frames
    tomography    per-second purity and polarization QBER from six-state counts
    distill       reconcile, verify and amplify paired sifted keys (or run a session)
    session       one side of a networked post-processing session
    keyrate       decoy bounds and asymptotic key rate
    serve         run the JSON API

Exit codes: 0 success, 2 configuration error, 3 file error, 4 protocol abort,
5 no secure key.
"""
import argparse
import logging
import os
import sys
from dataclasses import replace
from typing import Optional, Sequence

from .config import RunConfig, format_config_echo, load_config_file
from .errors import FileFormatError, NoKeyError, TbqkdError
from .services.analysis_pipeline import RunFiles, analyze, load_detections, open_emission_source
from .services.atmos_characterization import centroids_from_frames, r0_series, summarize_turbulence
from .services.key_distillation import distill_offline, evaluate_key_rate, measured_f_ec
from .services.polarization_tomography import reconstruct_series
from .services.report_ingest import load_centroid_file, load_counts_file
from .services.session_protocol import Role, open_transport, run_session
from .services.simulation import simulate
from .store.frame_store import read_frames
from .store.key_store import read_key, write_key
from .store.text_reports import (
    FRIED_COLUMNS,
    HISTOGRAM_COLUMNS,
    PER_SECOND_COLUMNS,
    TOMOGRAPHY_COLUMNS,
    write_csv_report,
    write_key_values,
    write_text,
)

# Configure logging
logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

RUN_CONFIG_FILE = "run.conf"
PER_SECOND_FILE = "per_second.csv"
HISTOGRAM_FILE = "histogram.csv"
SUMMARY_FILE = "analysis_summary.txt"
SIFTED_TX_FILE = "sifted_transmitter.key"
SIFTED_RX_FILE = "sifted_receiver.key"
FRIED_FILE = "fried.csv"
TURBULENCE_FILE = "turbulence_summary.txt"
TOMOGRAPHY_REPORT_FILE = "tomography.csv"
FINAL_TX_FILE = "final_transmitter.key"
FINAL_RX_FILE = "final_receiver.key"
DISTILL_FILE = "distill_report.txt"
KEYRATE_FILE = "keyrate_report.txt"
SESSION_KEY_FILE = "session_{role}.key"
SESSION_REPORT_FILE = "session_{role}_report.txt"


def _out_dir(args, default: str = ".") -> str:
    path = args.out or default
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise FileFormatError(f"cannot create {path}: {e}") from e
    return path


def _load(args, run_dir: Optional[str] = None) -> RunConfig:
    """Configuration from --config, else from a run directory's saved configuration."""
    path = args.config
    if path is None and run_dir is not None:
        saved = os.path.join(run_dir, RUN_CONFIG_FILE)
        if os.path.exists(saved):
            path = saved
    return load_config_file(path, args.preset, args.seed)


def cmd_simulate(args) -> int:
    config = _load(args)
    if args.duration is not None:
        config = replace(config, simulation=replace(config.simulation, duration=args.duration))
    out = _out_dir(args)
    echo = format_config_echo(config)
    summary = simulate(config, out, echo, blind=args.blind)
    write_text(os.path.join(out, RUN_CONFIG_FILE), "\n".join(echo) + "\n")
    print(f"simulated {summary.pulses} pulses: {summary.emissions} emissions, "
          f"{summary.detections} detections -> {out}")
    return 0


def cmd_analyze(args) -> int:
    run_dir = args.input or "."
    config = _load(args, run_dir)
    files = RunFiles.locate(run_dir)
    out = _out_dir(args, run_dir)
    echo = format_config_echo(config)

    emissions = open_emission_source(files.transmitter, config.source)
    detections = load_detections(files.receiver)
    centroids = load_centroid_file(files.centroids) if files.centroids and not args.skip_beacon else None
    counts = load_counts_file(files.tomography) if files.tomography and not args.skip_beacon else None
    report = analyze(config, emissions, detections, centroids, counts)

    write_csv_report(os.path.join(out, PER_SECOND_FILE), PER_SECOND_COLUMNS, report.rows(), echo)
    write_csv_report(os.path.join(out, HISTOGRAM_FILE), HISTOGRAM_COLUMNS, report.histogram.rows(), echo)
    write_key(os.path.join(out, SIFTED_TX_FILE), report.key_pair.transmitter_bits)
    write_key(os.path.join(out, SIFTED_RX_FILE), report.key_pair.receiver_bits)
    write_key_values(os.path.join(out, SUMMARY_FILE), [
        ("seconds", len(report.stats)),
        ("seconds_retained", len(report.retained_seconds)),
        ("sifted_bits", len(report.key_pair)),
        ("mean_qber_time", report.mean_qber),
        ("e_nu", report.e_nu),
        ("flagged", report.flagged),
    ], echo)

    if args.db:
        from main import create_app
        from .database import database_uri_for
        from .store.run_store import save_run

        app = create_app(database_uri_for(args.db))
        with app.app_context():
            run = save_run(report, echo, label=args.label)
            print(f"archived as run {run.id}")

    if report.flagged:
        print("no second passed the count-rate filter: mean QBER undefined (flagged)")
    else:
        print(f"mean QBER {report.mean_qber:.4f} over {len(report.retained_seconds)} retained seconds, "
              f"{len(report.key_pair)} sifted bits")
    return 0


def cmd_characterize(args) -> int:
    config = _load(args)
    atmos, channel = config.atmos, config.channel
    if args.frames:
        centroids = centroids_from_frames(read_frames(args.frames), atmos.frame_rate, atmos.plate_scale,
                                          atmos.background)
    elif args.centroids:
        centroids = load_centroid_file(args.centroids)
    else:
        raise FileFormatError("characterize needs --centroids or --frames")
    estimates = r0_series(centroids, atmos.frames_per_estimate, channel.beam_diameter, channel.wavelength_beacon)
    summary = summarize_turbulence(estimates, channel.wavelength_beacon, channel.distance, atmos.plane_wave_constant)

    out = _out_dir(args)
    echo = format_config_echo(config)
    write_csv_report(os.path.join(out, FRIED_FILE), FRIED_COLUMNS,
                     [(e.second_index, e.r0, e.sigma2_2axis, e.n_frames, e.degenerate) for e in estimates], echo)
    write_key_values(os.path.join(out, TURBULENCE_FILE), list(summary.as_dict().items()), echo)
    if summary.mean_r0 is None:
        print(f"{summary.estimates} blocks, all degenerate")
    else:
        spread = "n/a" if summary.relative_std is None else f"{summary.relative_std:.1f} %"
        print(f"mean r0 {summary.mean_r0 * 100:.2f} cm (spread {spread}), Cn2 {summary.cn2:.3e} m^-2/3, "
              f"{summary.degenerate} degenerate block(s)")
    return 0


def cmd_tomography(args) -> int:
    config = _load(args)
    counts = load_counts_file(args.counts)
    rows = reconstruct_series(counts, config.tomography.max_iterations, config.tomography.tolerance)
    out = _out_dir(args)
    write_csv_report(os.path.join(out, TOMOGRAPHY_REPORT_FILE), TOMOGRAPHY_COLUMNS,
                     [(r["second"], r["purity"], r["qber_pol"], *r["stokes"], r["converged"]) for r in rows],
                     format_config_echo(config))
    not_converged = sum(1 for r in rows if not r["converged"])
    print(f"reconstructed {len(rows)} second(s); {not_converged} did not converge")
    return 0


def cmd_distill(args) -> int:
    if args.role:
        return cmd_session(args)
    run_dir = args.input or "."
    config = _load(args, run_dir)
    tx = read_key(args.transmitter_key or os.path.join(run_dir, SIFTED_TX_FILE))
    rx = read_key(args.receiver_key or os.path.join(run_dir, SIFTED_RX_FILE))
    result = distill_offline(tx, rx, config.codes, seed=config.session.rng_seed, phi=config.session.pa_phi)

    out = _out_dir(args, run_dir)
    echo = format_config_echo(config)
    evaluation = evaluate_key_rate(config.decoy)
    secure = result.secure and result.failure_rate <= config.codes.max_failure_rate
    write_key_values(os.path.join(out, DISTILL_FILE), [
        ("status", "secure key" if secure else "no secure key"),
        ("sifted_bits", result.sifted_bits),
        ("qber", result.qber),
        ("reconciled_bits", result.reconciled_bits),
        ("leaked_bits", result.leaked_bits),
        ("final_length", result.final_length if secure else 0),
        ("f_ec_measured", result.f_ec),
        ("block_failure_rate", result.failure_rate),
        *sorted(evaluation.as_dict().items()),
    ], echo)
    if not secure:
        reason = (f"block failure rate {result.failure_rate:.2f} exceeds codes.max_failure_rate"
                  if result.failure_rate > config.codes.max_failure_rate else "privacy amplification leaves no key")
        raise NoKeyError(f"no secure key: {reason}")
    write_key(os.path.join(out, FINAL_TX_FILE), result.transmitter_key)
    write_key(os.path.join(out, FINAL_RX_FILE), result.receiver_key)
    print(f"{result.final_length} secret bits from {result.sifted_bits} sifted bits (QBER {result.qber:.4f})")
    return 0


def cmd_session(args) -> int:
    if not args.role:
        raise FileFormatError("session needs --role tx or rx")
    run_dir = args.input or "."
    config = _load(args, run_dir)
    if args.endpoint:
        config = replace(config, session=replace(config.session, endpoint=args.endpoint))
    role = Role(args.role)
    files = RunFiles.locate(run_dir)
    if role == Role.TRANSMITTER:
        local = {"emissions": open_emission_source(files.transmitter, config.source)}
    else:
        local = {"detections": load_detections(files.receiver)}

    sock = open_transport(role, config.session)
    try:
        result = run_session(role, sock, config.session, config.codes, config.coincidence,
                             config.source.repetition_rate, **local)
    finally:
        sock.close()

    out = _out_dir(args, run_dir)
    write_key_values(os.path.join(out, SESSION_REPORT_FILE.format(role=role.value)), [
        ("role", role.value),
        ("seconds_retained", result.seconds_retained),
        ("sifted_bits", result.sifted_bits),
        ("reconciled_bits", result.reconciled_bits),
        ("leaked_bits", result.leaked_bits),
        ("qber", result.qber),
        ("e_nu", result.e_nu),
        ("f_ec_measured", measured_f_ec(result.leaked_bits, result.reconciled_bits, result.qber or 0.0)),
        ("final_length", len(result.key)),
    ], format_config_echo(config))
    if len(result.key) == 0:
        raise NoKeyError("session completed without a secure key")
    write_key(os.path.join(out, SESSION_KEY_FILE.format(role=role.value)), result.key)
    print(f"session complete: {len(result.key)} secret bits")
    return 0


def cmd_keyrate(args) -> int:
    config = _load(args)
    evaluation = evaluate_key_rate(config.decoy)
    out = _out_dir(args)
    write_key_values(os.path.join(out, KEYRATE_FILE), sorted(evaluation.as_dict().items()),
                     format_config_echo(config))
    report = evaluation.report
    print(f"Y1 >= {evaluation.bounds.Y1_lower:.4e}, e1 <= {evaluation.bounds.e1_upper}, "
          f"rate {report.rate_per_second:.1f} bits/s")
    if not evaluation.secure:
        raise NoKeyError("no secure key at these parameters")
    return 0


def cmd_serve(args) -> int:
    from main import create_app
    from .database import database_uri_for

    app = create_app(database_uri_for(args.db))
    app.run(host=args.host, port=args.port, debug=False)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tbqkd", description="Time-bin free-space QKD toolkit")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="configuration file of section.key = value lines")
    common.add_argument("--preset", help="built-in configuration to start from (e.g. turbulent-link)")
    common.add_argument("--seed", type=int, help="run seed; overrides every section seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="simulate a run")
    p.add_argument("--duration", type=float, help="seconds to simulate (overrides simulation.duration)")
    p.add_argument("--blind", action="store_true", help="strip ground truth from the outputs")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("analyze", parents=[common], help="analyze a run directory")
    p.add_argument("--in", dest="input", help="run directory (default: current directory)")
    p.add_argument("--db", help="archive the analysis in this database (path or SQLAlchemy URI)")
    p.add_argument("--label", help="label of the archived run")
    p.add_argument("--skip-beacon", action="store_true", help="ignore centroid and tomography files")
    p.set_defaults(handler=cmd_analyze)

    p = sub.add_parser("characterize", parents=[common], help="turbulence from centroids or frames")
    p.add_argument("--centroids", help="centroid series file")
    p.add_argument("--frames", help="camera frame file")
    p.set_defaults(handler=cmd_characterize)

    p = sub.add_parser("tomography", parents=[common], help="polarization state per second")
    p.add_argument("--counts", required=True, help="six-state counts file")
    p.set_defaults(handler=cmd_tomography)

    for name, handler, text in (("distill", cmd_distill, "distill paired sifted keys"),
                                ("session", cmd_session, "run one side of a session")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--in", dest="input", help="run directory (default: current directory)")
        p.add_argument("--role", choices=[r.value for r in Role], help="session role")
        p.add_argument("--endpoint", help="host:port of the session")
        if name == "distill":
            p.add_argument("--transmitter-key", help="transmitter sifted key file")
            p.add_argument("--receiver-key", help="receiver sifted key file")
        p.set_defaults(handler=handler)

    p = sub.add_parser("keyrate", parents=[common], help="decoy bounds and key rate")
    p.set_defaults(handler=cmd_keyrate)

    p = sub.add_parser("serve", parents=[common], help="run the JSON API")
    p.add_argument("--db", help="run archive (path or SQLAlchemy URI)")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=5000)
    p.set_defaults(handler=cmd_serve)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format=LOG_FORMAT)
    try:
        return args.handler(args)
    except TbqkdError as e:
        logger.error(f"{args.command} failed: {str(e)}")
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
