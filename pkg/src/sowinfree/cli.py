"""Command-line front end: one subcommand per experiment kind.

Usage::

    sowinfree trap --config decks/trap.deck --seed 7 --out runs/trap7
    sowinfree fixedpoint --config decks/continuum.deck

Exit codes: 0 all certificates pass, 1 a certificate fails, 2 the deck or
the hypothesis validation rejects the run.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from sowinfree.config import KINDS, DeckError, build_spec, load_deck
from sowinfree.dynamics import STEPPERS
from sowinfree.experiments import EXIT_INVALID, run_experiment

_HELP = {
    "simulate": "integrate an ensemble and record observables (no certificates)",
    "trap": "certify that a compliant ensemble never leaves the gamma ball",
    "herd": "certify leader confinement and follower asymptotic radii",
    "stability": "certify exponential l1 contraction of paired trajectories",
    "sync": "certify pairwise synchronization of identical oscillators",
    "equilibrium": "construct the equilibrium, certify stationarity and relaxation",
    "fixedpoint": "solve the mean-influence fixed point and scan for roots",
    "reduce2d": "compare the n = 2 matrix flow against the scalar phase model",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sowinfree",
        description="Certificate experiments for coupled rotation ensembles.")
    sub = parser.add_subparsers(dest="kind", required=True, metavar="KIND")
    for kind in KINDS:
        sp = sub.add_parser(kind, help=_HELP[kind])
        sp.add_argument("--config", required=True, metavar="PATH",
                        help="experiment deck (key = value lines)")
        sp.add_argument("--seed", type=int, metavar="U64",
                        help="replace the deck's seed list with this one seed")
        sp.add_argument("--out", metavar="DIR", help="artifact directory")
        sp.add_argument("--override-hypotheses", action="store_true",
                        help="run even if hypothesis validation fails "
                             "(negative controls; the report is still written)")
        sp.add_argument("--stepper", choices=sorted(STEPPERS),
                        help="integrator override")
        sp.add_argument("--h", type=float, metavar="FLOAT",
                        help="step size override")
        sp.add_argument("--t-end", type=float, dest="t_end", metavar="FLOAT",
                        help="integration horizon override")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        mapping = load_deck(args.config)
        if "kind" in mapping and mapping["kind"] != args.kind:
            raise DeckError(f"deck declares kind {mapping['kind']!r} but the "
                            f"{args.kind!r} subcommand was invoked")
        mapping["kind"] = args.kind
        overrides = {"seed": args.seed, "out": args.out, "stepper": args.stepper,
                     "h": args.h, "t_end": args.t_end,
                     "override_hypotheses": args.override_hypotheses}
        spec = build_spec(mapping, base_dir=Path(args.config).parent,
                          overrides=overrides)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID

    outcome = run_experiment(spec)
    print(f"{spec.kind}: {len(spec.seeds)} seed(s), "
          f"deck digest {outcome.summary['config_hash'][:12]}")
    for seed, cert in outcome.certificates:
        print(f"  seed {seed}: {cert.name} {cert.outcome}")
    for msg in outcome.messages:
        print(f"  {msg}", file=sys.stderr)
    print(f"artifacts: {spec.out_dir}")
    return outcome.exit_code


if __name__ == "__main__":
    sys.exit(main())
