"""Main entry point for KoopWatch.

    python main.py run --scenario multiplicative_attack --out runs/mult
    python main.py plot-data --out runs/mult --which mode_spread
"""

import argparse
import logging
import sys

from config import app_config
from core import pipeline_module
from core.errors import InvalidParameter, InvalidSpec, KoopWatchError, ScenarioParseError, ScenarioValidationError

logger = logging.getLogger("koopwatch")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_RUNTIME = 3

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class KoopWatchApp:
    """Dispatches one CLI verb over one scenario."""
    def __init__(self, args):
        self.args = args
        self.cfg = None
        if getattr(args, "scenario", None) is not None or args.command != "plot-data":
            overrides = {"seed": args.seed, "n": args.n, "n_tilde": args.n_tilde, "tau": args.tau}
            self.cfg = app_config.load_scenario(args.scenario, overrides)
            if args.log_level is None:
                logging.getLogger().setLevel(self.cfg.log_level.upper())

    def run(self):
        handler = getattr(self, "do_" + self.args.command.replace("-", "_"))
        return handler()

    def do_validate(self):
        cfg = self.cfg
        print(f"Scenario: {cfg.source}")
        print(f"Buses: {cfg.network.n_buses}  sensors: {cfg.p}  pinned: {list(cfg.network.pinned)}")
        print(f"Simulation: T={cfg.simulation.T}s dt={cfg.simulation.dt:.6g}s noise={cfg.simulation.noise_std} seed={cfg.simulation.seed}")
        print(f"Detector: n={cfg.detector.n} n_tilde={cfg.detector.n_tilde} tau={cfg.detector.tau} seed={cfg.detector_seed}")
        for event in cfg.events:
            print(f"Event: {event.kind} bus={event.bus} t={event.t_start} delta_p={event.delta_p}")
        for attack in cfg.attacks:
            print(f"Attack: {attack.kind} targets={list(attack.targets)} [{attack.t_start}, {attack.t_end}] {attack.params}")
        print(f"Config hash: {cfg.config_hash}")
        return EXIT_OK

    def do_simulate(self):
        result, _ = pipeline_module.simulate_scenario(self.cfg, self.args.out)
        print(f"Simulated {len(result.true_stream)} samples of {result.true_stream.p} sensors into {self.args.out}")
        return EXIT_OK

    def do_attack(self):
        received = pipeline_module.attack_recorded(self.cfg, self.args.out)
        print(f"Applied {len(self.cfg.attacks)} attacks to {len(received)} recorded samples in {self.args.out}")
        return EXIT_OK

    def do_detect(self):
        reports, metrics = pipeline_module.detect_recorded(self.cfg, self.args.out)
        print(f"{len(reports)} detection reports, {metrics['attack_verdicts']} attack verdicts")
        return EXIT_OK

    def do_run(self):
        artifacts = pipeline_module.run_pipeline(self.cfg, self.args.out)
        metrics = artifacts.metrics
        print(f"Artifacts in {artifacts.out_dir} (config hash {artifacts.config_hash[:12]})")
        print(f"Attack verdicts: {metrics['attack_verdicts']} of {metrics['reports']} steps")
        if metrics["latency_samples"] is not None:
            print(f"Detection latency: {metrics['latency_samples']} samples ({metrics['latency_seconds']:.3f} s)")
        steady = metrics["steady_attack"]
        if steady["precision"] is not None:
            print(f"Steady attack precision {steady['precision']:.3f}, recall {steady['recall']:.3f}")
        return EXIT_OK

    def do_plot_data(self):
        artifacts = pipeline_module.load_artifacts(self.args.out)
        path = pipeline_module.emit_plot_data(artifacts, self.args.which, self.args.step)
        print(f"Wrote {path}")
        return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="koopwatch", description="Koopman-mode attack identification on simulated power grids.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", help="scenario file or name in $KOOPWATCH_SCENARIO_DIR (default: bundled 10-bus network)")
    common.add_argument("--out", default="runs/latest", help="run directory for artifacts")
    common.add_argument("--seed", type=int, help="override simulation and detector seeds")
    common.add_argument("--n", type=int, help="override the moving-window length")
    common.add_argument("--n-tilde", dest="n_tilde", type=int, help="override the prediction-window length")
    common.add_argument("--tau", type=float, help="override the separation threshold")
    common.add_argument("--log-level", dest="log_level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("simulate", parents=[common], help="closed-loop simulation with attacks in the loop")
    commands.add_parser("attack", parents=[common], help="apply the scenario's attacks to a recorded true stream")
    commands.add_parser("detect", parents=[common], help="run the detector over the recorded received stream")
    commands.add_parser("run", parents=[common], help="simulate, detect and score end to end")
    commands.add_parser("validate", parents=[common], help="check a scenario and print its summary")
    plot = commands.add_parser("plot-data", parents=[common], help="write plot-ready tables for a finished run")
    plot.add_argument("--which", choices=pipeline_module.PLOT_KINDS, default="timeseries")
    plot.add_argument("--step", type=int, help="detection step for mode_spread")
    return parser


def main(argv=None):
    """Parses arguments, runs the verb and returns the process exit code."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level or "INFO", format=LOG_FORMAT)
    try:
        return KoopWatchApp(args).run()
    except (ScenarioParseError, ScenarioValidationError, InvalidSpec, InvalidParameter) as e:
        logger.error("Invalid scenario: %s", e)
        return EXIT_INVALID
    except KoopWatchError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        logger.warning("KoopWatch stopped by user.")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
