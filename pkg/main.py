import argparse
import logging
import sys

from finsler_morse.config import LOG_LEVEL, OUTPUT_DIR
from finsler_morse.engine import MorseEngine
from finsler_morse.errors import FinslerMorseError
from finsler_morse.report import ReportManager
from finsler_morse.scenarios import ScenarioManager
from finsler_morse.suites import SuiteManager

ATOL_RATIO = 1e-2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="finsler-morse",
        description="Morse index verification along geodesics of conic pseudo-Finsler metrics",
    )
    parser.add_argument("--mesh", type=int, default=None, help="interior nodes of the spectral mesh")
    parser.add_argument("--ode-tol", type=float, default=None, help="relative ODE tolerance")
    parser.add_argument("--rank-tol", type=float, default=None, help="relative singular-value threshold")
    parser.add_argument("--seed", type=int, default=0, help="seed for randomized suites")
    parser.add_argument("--out", default=OUTPUT_DIR, help="directory for JSON reports and CSV traces")
    parser.add_argument("--quiet", action="store_true", help="only log warnings and errors")

    commands = parser.add_subparsers(dest="command", required=True)
    run = commands.add_parser("run", help="run one scenario (built-in name or TOML file)")
    run.add_argument("config")
    verify = commands.add_parser("verify", help="run a verification suite")
    verify.add_argument("suite", choices=SuiteManager.names())
    verify.add_argument("--count", type=int, default=None, help="random draws for ms1-random, ms2-random and propB")
    trace = commands.add_parser("trace", help="run a scenario and write geodesic and focal-scan CSVs")
    trace.add_argument("config")
    commands.add_parser("list", help="list built-in scenarios and suites")
    return parser


def create_engine(args: argparse.Namespace) -> MorseEngine:
    atol = args.ode_tol * ATOL_RATIO if args.ode_tol is not None else None
    return MorseEngine(
        verbose=not args.quiet,
        mesh=args.mesh,
        rtol=args.ode_tol,
        atol=atol,
        rank_tol=args.rank_tol,
    )


def print_report(report) -> None:
    status = "✅ passed" if report.passed else "❌ FAILED"
    print(f"\n📐 {report.name}: {status}")
    if report.focal:
        points = ", ".join(f"t={p['time']:.9f} (μ={p['multiplicity']})" for p in report.focal)
        print(f"   focal: {points}")
    for key, value in report.indices.items():
        print(f"   index[{key}] = {value}, nullity = {report.nullities.get(key, '-')}")
    if report.failure:
        print(f"   stage {report.failure['stage']}: {report.failure['type']}: {report.failure['message']}")
    for assertion in report.failed_assertions():
        print(f"   ✗ {assertion.name}: expected {assertion.expected}, got {assertion.actual}")


def main(argv=None) -> int:
    """Entry point; returns 1 when any assertion fails"""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else LOG_LEVEL,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    if args.command == "list":
        print("=== Built-in scenarios ===")
        for name in ScenarioManager.builtin_names():
            print(f"- {name}")
        print("\n=== Suites ===")
        for name in SuiteManager.names():
            print(f"- {name}")
        return 0

    try:
        engine = create_engine(args)
        if args.command == "verify":
            print(f"🔄 Running suite {args.suite} (seed {args.seed})...")
            suite = engine.verify_suite(args.suite, args.seed, args.count)
            for report in suite.reports:
                if not report.passed:
                    print_report(report)
            ReportManager.emit_suite(suite, args.out)
            print(f"\n📊 {suite.pass_count}/{len(suite.reports)} passed")
            return 0 if suite.passed else 1

        scenario = ScenarioManager.resolve(args.config)
        print(f"🔄 Running {scenario.name}...")
        if args.command == "trace":
            report, traces = engine.trace(scenario)
        else:
            report, traces = engine.run_scenario(scenario), None
        print_report(report)
        written = ReportManager.emit(report, args.out, traces)
        print(f"💾 Wrote {len(written)} files to {args.out}")
        return 0 if report.passed else 1
    except FinslerMorseError as e:
        print(f"❌ {e}")
        return 1
    except KeyboardInterrupt:
        print("\n👋 Interrupted")
        return 1


if __name__ == "__main__":
    sys.exit(main())
