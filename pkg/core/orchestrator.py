import os
import time

from core.config import EXPERIMENTS, ExperimentConfig, get_settings
from core.experiments import EXPERIMENT_REGISTRY, ExperimentContext, coverage_check
from core.file_system import FileSystem
from core.logger import logger
from core.report import VerificationReport, environment_metadata, report_to_csv, report_to_json
from core.state import OperationLedger, RunState


class Orchestrator:
    def __init__(self, output_dir: str | None = None):
        self.output_dir = output_dir or get_settings().output_dir
        self.fs = FileSystem(self.output_dir)
        logger.info(f"Initializing verification orchestrator (output root: {self.fs.root})")

    def run(self, config: ExperimentConfig) -> tuple[VerificationReport, str]:
        """
        Run the configured experiment (or all of them in the fixed order), then write the
        JSON report and its CSV twin. Returns the report and the JSON path.
        """
        names = EXPERIMENTS if config.experiment == "all" else (config.experiment,)
        logger.info(f"Starting verification run: {', '.join(names)}")
        RunState.begin_run(names)
        OperationLedger.reset()

        # ── Phase 1: context (grid, profile, kernel, weight) ──────────────
        ctx = ExperimentContext(config)

        # ── Phase 2: experiments ──────────────────────────────────────────
        for name in names:
            description, fn = EXPERIMENT_REGISTRY[name]
            RunState.note(f"{name}: {description}")
            start = time.perf_counter()
            fn(ctx)
            tally = RunState.tally(name)
            logger.info(f"Experiment {name}: {tally.passed}/{tally.checks} checks passed "
                        f"({tally.errors} raised) in {time.perf_counter() - start:.1f}s")

        # ── Phase 3: coverage self-check ──────────────────────────────────
        if config.experiment == "all":
            RunState.set_phase("coverage")
            coverage_check(ctx)

        # ── Phase 4: report ───────────────────────────────────────────────
        RunState.set_phase("report")
        cfg = config.to_dict()
        report = VerificationReport(
            config=cfg,
            records=ctx.records,
            environment=environment_metadata(cfg),
            coverage={"registered": OperationLedger.registered(), "invoked": OperationLedger.invoked(),
                      "uninvoked": OperationLedger.uninvoked()},
        )
        json_path = self.fs.unique_path(config.output)
        self.fs.write_file(os.path.relpath(json_path, self.fs.root), report_to_json(report))
        csv_path = os.path.splitext(json_path)[0] + ".csv"
        self.fs.write_file(os.path.relpath(csv_path, self.fs.root), report_to_csv(report))

        RunState.set_phase("complete")
        logger.info(f"Verification complete: {len(report.records) - len(report.failed())}/{len(report.records)} "
                    f"checks passed. Report: {json_path}")
        return report, json_path
