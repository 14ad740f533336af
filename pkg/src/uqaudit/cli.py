"""Command-line entry point: ``uqaudit audit | sample | table | protocol-check``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .audit import AuditConfig, run_audit
from .config import OUT_ENV, describe_defaults, load_config
from .errors import ConfigError
from .imaging import ObservationModel, psnr, read_image, write_png16
from .methods import build_dataset, build_kernel, build_models, make_sampler, sigma_from_observed_bsnr
from .report import TrialWriter, format_table, merged_table, table_csv, write_bundle

log = logging.getLogger("uqaudit")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


class _HelpFormatter(argparse.ArgumentDefaultsHelpFormatter, argparse.RawDescriptionHelpFormatter):
    pass


def _common(p):
    p.add_argument("--config", required=True, metavar="PATH", help="INI run configuration")
    p.add_argument("--out", metavar="DIR", default=None, help=f"output directory (overrides config and ${OUT_ENV})")
    p.add_argument("--seed", type=int, default=None, metavar="U64", help="root seed (overrides audit.seed)")
    p.add_argument("--method", default=None, metavar="NAME", help="method (overrides method.name)")


def build_parser():
    epilog = "configuration keys and defaults:\n" + describe_defaults()
    parser = argparse.ArgumentParser(
        prog="uqaudit", description=__doc__, epilog=epilog, formatter_class=_HelpFormatter
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("audit", help="run a coverage audit", epilog=epilog, formatter_class=_HelpFormatter)
    _common(p)
    p.add_argument("--threads", type=int, default=None, metavar="N", help="worker threads (overrides audit.threads)")

    p = sub.add_parser("sample", help="sample the posterior for one image", epilog=epilog, formatter_class=_HelpFormatter)
    _common(p)
    p.add_argument("image", help="observed image (PNG/PGM)")
    p.add_argument("--truth", default=None, help="ground-truth image; enables the PSNR line")
    p.add_argument("--sheet", type=int, default=16, metavar="K", help="samples in the contact sheet")

    p = sub.add_parser("table", help="merge report.json files into one coverage table", formatter_class=_HelpFormatter)
    p.add_argument("reports", nargs="+", help="report.json paths")
    p.add_argument("--csv", default=None, metavar="PATH", help="also write the table as CSV")

    p = sub.add_parser("protocol-check", help="external protocol conformance check", formatter_class=_HelpFormatter)
    p.add_argument("--frames", type=int, default=1000, help="round-trip frames")
    p.add_argument("--fuzz", type=int, default=100, help="malformed frames")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _load(args, threads=None):
    return load_config(args.config, method=args.method, seed=args.seed, threads=threads, out=args.out)


def cmd_audit(args):
    rc = _load(args, args.threads)
    a = rc.audit
    cfg = AuditConfig(tuple(a["alphas"]), a["n_trials"], a["region"], a["sampling"], a["seed"], a["level"])
    dataset = build_dataset(rc)
    models = build_models(rc, dataset)
    (shape,) = dataset.shapes
    sampler = make_sampler(rc, shape)
    out = Path(rc.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        with TrialWriter(out / "trials.ndjson") as writer:
            report = run_audit(
                dataset, sampler, models, cfg, threads=a["threads"], on_record=writer, provenance=rc.echo()
            )
    finally:
        sampler.close()
    d = write_bundle(report, out)
    for r in d["rows"]:
        print(
            f"target={r['target_coverage']:.3f} observed={r['observed_coverage']:.4f} "
            f"ell_hat={r['ell_hat']:+.4f} verdict={r['verdict']}"
        )
    print(f"wrote {out}")
    return EXIT_OK


def _contact_sheet(samples, k):
    idx = np.unique(np.linspace(0, samples.shape[0] - 1, num=min(k, samples.shape[0])).round().astype(int))
    tiles = samples[idx]
    cols = int(np.ceil(np.sqrt(len(tiles))))
    rows = int(np.ceil(len(tiles) / cols))
    h, w = tiles.shape[1:]
    sheet = np.zeros((rows * (h + 1) - 1, cols * (w + 1) - 1))
    for n, t in enumerate(tiles):
        r, c = divmod(n, cols)
        sheet[r * (h + 1) : r * (h + 1) + h, c * (w + 1) : c * (w + 1) + w] = t
    return sheet


def cmd_sample(args):
    rc = _load(args)
    y = read_image(args.image)
    sigma = rc.observation["sigma"]
    if sigma is None:
        sigma = sigma_from_observed_bsnr(y, rc.observation["bsnr_db"])
    m = ObservationModel(build_kernel(rc.observation), sigma)
    sampler = make_sampler(rc, y.shape)
    try:
        chain = sampler(y, m, rc.audit["seed"], ())
    finally:
        sampler.close()
    post = chain.info.get("posterior")
    mean = post.mean if post is not None else chain.mean
    out = Path(rc.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_png16(out / "mean.png", mean)
    write_png16(out / "samples.png", _contact_sheet(chain.samples, args.sheet))
    if getattr(sampler, "last_lambda", None) is not None:
        print(f"lambda_hat={sampler.last_lambda!r}")
    if args.truth:
        print(f"psnr={psnr(read_image(args.truth), mean):.4f}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_table(args):
    rows, notes = merged_table(args.reports)
    sys.stdout.write(format_table(rows, notes))
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="\n") as f:
            f.write(table_csv(rows))
    return EXIT_OK


def cmd_protocol_check(args):
    from .protocol import protocol_check

    ok, rejected = protocol_check(args.frames, args.fuzz, args.seed, out=sys.stdout)
    return EXIT_OK if ok == args.frames and rejected == args.fuzz else EXIT_FAIL


COMMANDS = {"audit": cmd_audit, "sample": cmd_sample, "table": cmd_table, "protocol-check": cmd_protocol_check}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
