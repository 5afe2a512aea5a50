"""
Main application entry point for the Heat Flow Lab
"""

import argparse
import logging
import sys

from agents.heat_flow import Config, HeatFlowLab, ScenarioError
from agents.heat_flow.verify import DEFAULT_GRID_SIZE

logger = logging.getLogger(__name__)

STATUS_EMOJI = {"converged": "✅", "t_max_reached": "⚠️", "diverged": "❌"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Donaldson heat flow lab on orbifold torus quotients")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (("flow", "Run the heat flow of a scenario"),
                            ("probe", "Run the flow and attach a destabilization probe")):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="Scenario JSON file")
        cmd.add_argument("--seed", type=int, default=None, help="Override the initial-metric seed")
        cmd.add_argument("--out", default=None, help="Output directory for trace and reports")
        cmd.add_argument("--probe", action="store_true", help="Attach a destabilization probe report")

    verify = sub.add_parser("verify", help="Run the invariant suite")
    verify.add_argument("--profile", choices=("spectral", "fd2", "fd4"), default="spectral")
    verify.add_argument("--seed", type=int, default=0)
    verify.add_argument("--grid-size", type=int, default=DEFAULT_GRID_SIZE)
    verify.add_argument("--tolerance-scale", type=float, default=None)
    verify.add_argument("--out", default=None, help="Write the residual table as CSV here")

    degree = sub.add_parser("degree", help="Print degree, slope and lambda of a scenario bundle")
    degree.add_argument("--config", required=True, help="Scenario JSON file")
    return parser


def cmd_flow(lab: HeatFlowLab, args) -> int:
    scenario = lab.load(args.config)
    probe = args.probe or args.command == "probe"
    print(f"\n🌊 Running scenario '{scenario.name}'...")
    result = lab.run_scenario(scenario, seed=args.seed, out_dir=args.out, probe=probe)
    if "error" in result:
        print(f"  ❌ Error: {result['error']}")
        return 1

    summary = result["summary"]
    final = summary.get("final") or {}
    print(f"  {STATUS_EMOJI.get(result['status'], '•')} Status: {result['status']} ({summary['message']})")
    print(f"  • Steps: {summary['steps']}, monitor rows: {summary['rows']}")
    if final:
        print(f"  • Final M_K: {final['M_K']:.6g}, sup_dev: {final['sup_dev']:.3e}, l2_dev: {final['l2_dev']:.3e}")
    properness = summary["properness"]
    print(f"  • Proper: {properness['proper']} (C1={properness['C1']}, C2={properness['C2']})")
    checks = summary["checks"]
    print(f"  • Heat-kernel violations: {checks['heat_kernel_violations']}/{checks['heat_kernel_samples']}")

    if result["probe"] is not None:
        report = result["probe"]
        emoji = "✅" if report["found"] else "⚠️"
        print(f"\n🔍 Destabilization probe: {emoji} {report['status']}")
        if report["found"]:
            print(f"  • deg(pi)={report['deg_pi']:.6f}, mu(pi)={report['mu_pi']:.6f}, mu(E)={report['mu_E']:.6f}")
            print(f"  • W={report['W']:.3e}, weak holomorphy residual={report['weak_holo']['residual']:.3e}")

    for kind, path in result["paths"].items():
        print(f"  📄 {kind}: {path}")
    return 0 if result["success"] else 2


def cmd_verify(lab: HeatFlowLab, args) -> int:
    print(f"\n🧪 Running invariant suite ({args.profile}, n={args.grid_size}, seed={args.seed})...")
    result = lab.verify(n=args.grid_size, profile=args.profile, seed=args.seed,
                        tolerance_scale=args.tolerance_scale)
    if "error" in result:
        print(f"  ❌ Error: {result['error']}")
        return 1
    table = result["table"]
    print(table[["name", "residual", "tolerance", "passed", "seconds"]].to_string(index=False))
    if args.out:
        table.to_csv(args.out, index=False)
    if result["all_passed"]:
        print("\n✅ All checks passed")
        return 0
    print(f"\n❌ Failed checks: {', '.join(result['failed'])}")
    return 1


def cmd_degree(lab: HeatFlowLab, args) -> int:
    scenario = lab.load(args.config)
    table = lab.degree_table(scenario)
    if not table["success"]:
        print(f"  ❌ Error: {table['error']}")
        return 1
    lam = table["lambda"]
    print(f"\n📐 Bundle of scenario '{scenario.name}'")
    print(f"  • Rank: {table['rank']}")
    print(f"  • Degree: {table['degree']:.9f} (topological {table['topological_degree']})")
    print(f"  • Slope: {table['slope']:.9f}")
    print(f"  • Lambda: {lam.real:.9f} {lam.imag:+.9f}i")
    for row in table["summands"]:
        print(f"    - summand {row['index']} (twist {row['twist']}): degree {row['degree']:.9f}")
    for row in table.get("projection_chain", []):
        print(f"    - projection onto {row['indices']}: degree {row['degree']:.9f}")
    return 0


COMMANDS = {"flow": cmd_flow, "probe": cmd_flow, "verify": cmd_verify, "degree": cmd_degree}


def main(argv=None) -> int:
    """Main application entry point"""
    args = build_parser().parse_args(argv)

    # Configure logging
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )

    print("🔥 Heat Flow Lab - Donaldson flow on orbifold tori")
    print("=" * 50)

    try:
        config = Config()
        if getattr(args, "tolerance_scale", None) is not None:
            config = Config(tolerance_scale=args.tolerance_scale)
        lab = HeatFlowLab(config)
        return COMMANDS[args.command](lab, args)

    except ScenarioError as e:
        print(f"❌ Scenario error: {e}")
        return 3
    except ValueError as e:
        print(f"❌ Configuration error: {e}")
        return 3
    except Exception as e:
        logger.error(f"Application error: {e}")
        print(f"❌ Error: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
