#!/usr/bin/env python3
"""
Desk-scale acceptance runner for kkl-tune.

The fast checks (norm oracles, autodiff, linear contraction) live in the
pytest suite and are run from here through pytest. The slow checks train
real observers on the benchmark systems with reduced sample counts and
print one PASS/FAIL line each.
"""

import subprocess
import sys
import time
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np
import typer

from kkl_tune.config import default_config
from kkl_tune.core import KKLPipeline
from kkl_tune.dynamics import HARMONIC_A, HARMONIC_C, sylvester_transform
from kkl_tune.errors import KKLTuneError
from kkl_tune.linfilter import build_design, is_hurwitz
from kkl_tune.sampling import backward_forward, uniform_grid

FAST_SUITES = [
    ("tests/test_linfilter.py::TestNorms", "Norm oracles"),
    ("tests/test_neural.py::TestDifferentiation", "Autodiff against finite differences"),
    ("tests/test_observer.py::TestContraction", "Contraction on the linear oracle"),
]

DESK_GRID = {"min": 0.03, "max": 1.0, "count": 10, "spacing": "log"}


def banner(title: str) -> None:
    print(f"\n{'='*60}")
    print(title)
    print(f"{'='*60}")


def desk_pipeline(system: str, out: Path, seed: int = 0, **sections: Dict) -> KKLPipeline:
    """Pipeline with N=1,000 per omega_c, 10 log-spaced omega_c and n=2,000 test points."""
    config = default_config(system)
    config.sampler.n = 1000
    config.sampler.seed = seed
    config.trainer.seed = seed
    for key, value in DESK_GRID.items():
        setattr(config.omega_grid, key, value)
    config.evaluation.n_test = 2000
    for section, values in sections.items():
        for key, value in values.items():
            setattr(getattr(config, section), key, value)
    return KKLPipeline(config, out, threads=4)


class AcceptanceSuite:
    """Runs the checks in order, sharing the trained models between them."""

    def __init__(self, out_dir: Path, seeds: List[int]):
        self.out_dir = out_dir
        self.seeds = seeds
        self.results: Dict[str, Optional[bool]] = {}
        self.duffing: Dict[int, KKLPipeline] = {}
        self.argmins: Dict[int, float] = {}
        self.vdp: Optional[KKLPipeline] = None

    def record(self, name: str, passed: bool, detail: str) -> None:
        self.results[name] = passed
        status = "✅ PASS" if passed else "❌ FAIL"
        print(f"{name:.<50} {status}  {detail}")

    def run_fast_suites(self) -> None:
        banner("Fast checks (pytest)")
        for target, description in FAST_SUITES:
            result = subprocess.run(
                [sys.executable, "-m", "pytest", target, "-q"],
                capture_output=True, text=True, cwd=Path.cwd(),
            )
            summary = result.stdout.strip().splitlines()[-1] if result.stdout.strip() else result.stderr
            self.record(description, result.returncode == 0, summary)

    def check_linear_identity(self) -> None:
        banner("Linear system: Sylvester pairs and identity reconstruction")
        pipeline = desk_pipeline(
            "harmonic", self.out_dir / "harmonic",
            omega_grid={"min": 0.1, "max": 1.0, "count": 5},
            trainer={"epochs": 500, "batch_size": 256, "patience": 50},
        )
        pipeline.generate()
        pipeline.train()
        model = pipeline.load_checkpoint()

        x = uniform_grid(400, pipeline.system.lower, pipeline.system.upper)
        pair_error = recon_error = 0.0
        for omega_c in pipeline.omegas():
            design = build_design(float(omega_c), 2, 1)
            _, z, _ = backward_forward(pipeline.system, design, x)
            T = sylvester_transform(HARMONIC_A, HARMONIC_C, design.D, design.F)
            pair_error = max(pair_error, float(np.abs(z - x @ T.T).max()))
            recon_error = max(recon_error, float(np.abs(model.decode(z, omega_c) - x).max()))
        self.record("Backward-forward pairs vs Sylvester", pair_error < 1e-3, f"max {pair_error:.2e}")
        self.record("Supervised identity reconstruction", recon_error < 1e-2, f"max {recon_error:.2e}")

    def check_duffing_criterion(self) -> None:
        banner("Reverse Duffing: interior argmin of the criterion")
        failures = 0
        for seed in self.seeds:
            pipeline = desk_pipeline("rev-duffing", self.out_dir / f"duffing_s{seed}", seed=seed)
            try:
                pipeline.generate()
                pipeline.train()
                report = pipeline.tune()
            except KKLTuneError as e:
                print(f"seed {seed}: {e}")
                failures += 1
                continue
            omegas = pipeline.omegas()
            interior = omegas[0] < report.argmin_omega_c < omegas[-1]
            failures += not interior
            print(f"seed {seed}: argmin omega_c = {report.argmin_omega_c:.4g} ({'interior' if interior else 'boundary'})")
            self.duffing[seed] = pipeline
            self.argmins[seed] = report.argmin_omega_c
        self.record("Interior argmin", failures <= 1, f"{failures} of {len(self.seeds)} seeds failed")

    def check_contraction(self) -> None:
        banner("Contraction of trained models")
        if not self.duffing:
            self.record("Trained-model contraction", False, "no trained reverse-Duffing model")
            return
        seed, pipeline = next(iter(self.duffing.items()))
        omega_c = self.argmins[seed]
        fit = pipeline.contraction(omega_c)
        detail = "converged" if fit.converged else f"slope {fit.slope:.4g} vs -lambda_min {-fit.lambda_min:.4g}"
        self.record("Trained-model contraction", fit.satisfies(0.9), detail)

    def check_noise_tradeoff(self) -> None:
        banner("Van der Pol: noise trade-off")
        pipeline = desk_pipeline("van-der-pol", self.out_dir / "vdp")
        pipeline.generate()
        pipeline.train()
        best = pipeline.tune().argmin_omega_c
        rmse = {w: pipeline.evaluate(w, 0.25, x0=(0.1, 0.1)).rmse for w in (0.03, best, 1.0)}
        self.vdp = pipeline
        detail = ", ".join(f"RMSE({w:.3g})={v:.3f}" for w, v in rmse.items())
        self.record("Optimum beats both grid ends", rmse[best] < min(rmse[0.03], rmse[1.0]), detail)

    def check_heatmap(self) -> None:
        banner("Van der Pol: heatmap homogeneity at omega_c = 0.2")
        if self.vdp is None:
            self.record("Heatmap max <= 10x median", False, "no trained Van der Pol model")
            return
        errors = self.vdp.heatmap(0.2)["error"]
        ratio = float(errors.max() / errors.median())
        self.record("Heatmap max <= 10x median", ratio <= 10.0, f"max/median {ratio:.2f}")

    def check_autoencoder(self) -> None:
        banner("Reverse Duffing: autoencoder with trainable D")
        pipeline = desk_pipeline(
            "rev-duffing", self.out_dir / "autoencoder",
            trainer={"mode": "autoencoder", "optimize_D": True, "lambda_weight": 0.1,
                     "autoencoder_omega_c": 0.2, "autoencoder_samples": 10000},
        )
        model, _ = pipeline.train()
        drift = model.training_meta["eigenvalue_drift"]
        self.record("Trained D Hurwitz, drift <= 25%", is_hurwitz(model.D) and drift <= 0.25, f"drift {drift:.1%}")

        if 0 not in self.duffing:
            self.record("Autoencoder RMSE vs supervised", False, "no supervised seed-0 model")
            return
        ae_rmse = pipeline.evaluate(0.2, 0.5, x0=(0.6, 0.6)).rmse
        sup_rmse = self.duffing[0].evaluate(0.2, 0.5, x0=(0.6, 0.6)).rmse
        ratio = ae_rmse / sup_rmse
        self.record(
            "Autoencoder RMSE vs supervised", 0.5 <= ratio <= 1.5,
            f"{ae_rmse:.3f} vs {sup_rmse:.3f} (ratio {ratio:.2f})",
        )

    def run(self, checks: List[Callable[[], None]]) -> int:
        start = time.perf_counter()
        for check in checks:
            try:
                check()
            except KKLTuneError as e:
                self.record(check.__name__, False, f"{type(e).__name__}: {e}")

        banner("ACCEPTANCE SUMMARY")
        failed = [name for name, passed in self.results.items() if not passed]
        print(f"{len(self.results) - len(failed)} passed, {len(failed)} failed "
              f"in {time.perf_counter() - start:.0f} s")
        for name in failed:
            print(f"  - {name}")
        return 1 if failed else 0


def main(
    out: Path = typer.Option(Path("runs/acceptance"), "--out", "-o", help="Artifact directory"),
    seeds: int = typer.Option(3, "--seeds", help="Seeds for the criterion-shape check", min=1),
    fast_only: bool = typer.Option(False, "--fast-only", help="Run the pytest checks only"),
):
    """Run the acceptance checks and exit non-zero on any failure."""
    print("kkl-tune - Desk-Scale Acceptance")
    print("=" * 60)
    suite = AcceptanceSuite(out, list(range(seeds)))
    checks = [suite.run_fast_suites]
    if not fast_only:
        checks += [
            suite.check_linear_identity,
            suite.check_duffing_criterion,
            suite.check_contraction,
            suite.check_noise_tradeoff,
            suite.check_heatmap,
            suite.check_autoencoder,
        ]
    sys.exit(suite.run(checks))


if __name__ == "__main__":
    try:
        typer.run(main)
    except KeyboardInterrupt:
        print("\nAcceptance run interrupted by user")
        sys.exit(1)
