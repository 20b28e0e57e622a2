"""End-to-end experiment harness: fit, train, predict, score.

A subcase names the input/output representation pair of the learning
problem: signal coefficients at an optimized or unoptimized scale on the
input side, and spherical-harmonic or q-space-basis coefficients of the
FOD on the output side. For every evaluation fold the scale is optimized
on training blocks only and then frozen for fitting the test rows, so no
information leaks across the split; the same block discipline applies to
the network folds. Predictions are mapped back to sphere functions,
exponentiated out of log space, refit as spherical harmonics and scored
with the angular correlation coefficient against the ground truth.
"""

from dataclasses import dataclass, field

import numpy as np

from . import net, sh, shore, stats
from .errors import InvalidArgumentError
from .net import TrainConfig
from .nonneg import NonNegConfig, clamp_log, exp_restore
from .shore import ShoreFitConfig
from .sphere import generate_uniform_directions

# subcase name -> (optimize scale on input side, target representation)
SUBCASES = {
    "opt-shore-to-sh": (True, "sh"),
    "unopt-shore-to-shore": (False, "shore"),
    "opt-shore-to-shore": (True, "shore"),
}


@dataclass
class PipelineConfig:
    subcase: str = "opt-shore-to-shore"
    shells: tuple = None            # None = every shell in the dataset
    withhold_b: float = None        # shell excluded from input fitting
    shore: ShoreFitConfig = field(default_factory=ShoreFitConfig)
    nonneg: NonNegConfig = field(default_factory=NonNegConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    direction_seed: int = 11
    n_fod_directions: int = 100
    direction_iterations: int = 500
    sh_order: int = 8
    fod_bvalue: float = 2000.0
    eval_folds: int = 8
    max_folds: int = None           # evaluate only the first folds when set
    nested: bool = True             # carve a validation fold out of training data
    zeta0: float = None             # None = median(b)/8 of the masked scheme
    zeta_subsample: int = None

    def __post_init__(self):
        if self.subcase not in SUBCASES:
            raise InvalidArgumentError(
                f"unknown subcase {self.subcase!r}; expected one of {sorted(SUBCASES)}"
            )
        if self.eval_folds < 2:
            raise InvalidArgumentError("eval_folds must be >= 2")

    def to_dict(self):
        return {
            "subcase": self.subcase,
            "shells": None if self.shells is None else [float(s) for s in self.shells],
            "withhold_b": self.withhold_b,
            "shore": {
                "radial_order": self.shore.radial_order,
                "lambda_n": self.shore.lambda_n,
                "lambda_l": self.shore.lambda_l,
            },
            "nonneg_epsilon": self.nonneg.epsilon,
            "train": {
                "epochs": self.train.epochs,
                "batch_size": self.train.batch_size,
                "learning_rate": self.train.learning_rate,
                "decay": self.train.decay,
                "stabilizer": self.train.stabilizer,
                "momentum": self.train.momentum,
                "seed": self.train.seed,
                "k_folds": self.train.k_folds,
                "early_stop": self.train.early_stop,
                "patience": self.train.patience,
            },
            "direction_seed": self.direction_seed,
            "n_fod_directions": self.n_fod_directions,
            "direction_iterations": self.direction_iterations,
            "sh_order": self.sh_order,
            "fod_bvalue": self.fod_bvalue,
            "eval_folds": self.eval_folds,
            "max_folds": self.max_folds,
            "nested": self.nested,
            "zeta0": self.zeta0,
            "zeta_subsample": self.zeta_subsample,
        }


@dataclass
class EvalReport:
    subcase: str
    acc: np.ndarray
    median: float
    mean: float
    row_index: np.ndarray
    folds: list
    audit: dict
    config: dict

    def to_dict(self):
        return {
            "subcase": self.subcase,
            "acc": [float(v) for v in self.acc],
            "median": self.median,
            "mean": self.mean,
            "row_index": [int(r) for r in self.row_index],
            "folds": self.folds,
            "audit": self.audit,
            "config": self.config,
        }


def fod_directions(cfg):
    """The fixed sphere used for every FOD sampling and prediction step."""
    return generate_uniform_directions(
        cfg.n_fod_directions, cfg.direction_seed, cfg.direction_iterations
    )


def shell_mask(samples, shells=None, withhold_b=None, tolerance=0.5):
    """Boolean sample mask selecting the requested shells.

    `shells = None` keeps every shell; `withhold_b` then removes one.
    """
    bvalues = samples.bvalues
    if shells is None:
        mask = np.ones(len(samples), dtype=bool)
    else:
        mask = np.zeros(len(samples), dtype=bool)
        for s in shells:
            mask |= np.abs(bvalues - float(s)) <= tolerance
    if withhold_b is not None:
        mask &= np.abs(bvalues - float(withhold_b)) > tolerance
    if not mask.any():
        raise InvalidArgumentError("shell selection matches no samples")
    return mask


def _fold_seed(base, fold_index):
    return int(np.random.SeedSequence((base, fold_index)).generate_state(1)[0])


class _Standardizer:
    """Per-coefficient affine normalization frozen on training rows.

    Coefficient scales span several orders of magnitude, which RMSProp
    handles poorly; near-constant coefficients are floored at a fraction
    of the largest spread so they are not amplified into noise.
    """

    def __init__(self, values, floor=0.05):
        self.mean = values.mean(axis=0)
        spread = values.std(axis=0)
        # floor against the median spread: a few inflated coefficients must
        # not drag ordinary ones below the floor and out of the loss
        reference = float(np.median(spread))
        if reference <= 0.0:
            reference = float(spread.max())
        if reference <= 0.0:
            raise InvalidArgumentError("cannot standardize all-constant coefficients")
        self.scale = np.maximum(spread, floor * reference)

    def forward(self, values):
        return (values - self.mean) / self.scale

    def inverse(self, values):
        return values * self.scale + self.mean


def _predicted_fod_sh(pred_coeffs, target_kind, dirs, cfg, zeta, out_degree):
    """Map predicted log-domain coefficients to linear-space SH series."""
    if target_kind == "shore":
        fod_scheme = shore.QSpaceSamples(
            np.full(len(dirs), cfg.fod_bvalue), dirs
        )
        design = shore.shore_design_matrix(fod_scheme, cfg.shore.radial_order, zeta)
        log_values = pred_coeffs @ design.T
    else:
        log_values = pred_coeffs @ sh.eval_sh_basis(dirs, cfg.sh_order).T
    amplitudes = exp_restore(log_values)
    return sh.fit_sh_many(amplitudes, dirs, out_degree, ridge=0.0), amplitudes


def run_subcase_experiment(cfg, dataset):
    """Run one subcase with block-aware cross-validation.

    Returns an EvalReport with the per-test-voxel ACC values concatenated
    over folds, per-fold diagnostics (including the frozen scale), and a
    block audit proving that no block crossed its fold boundary.
    """
    optimize_scale, target_kind = SUBCASES[cfg.subcase]
    mask = shell_mask(dataset.samples, cfg.shells, cfg.withhold_b)
    sub_samples = dataset.samples.subset(mask)
    lin_signals = dataset.signals[:, mask]
    log_signals = clamp_log(lin_signals, cfg.nonneg)

    dirs = fod_directions(cfg)
    fod_values = dataset.fod_coeffs @ sh.eval_sh_basis(dirs, dataset.sh_order).T
    log_fod = clamp_log(fod_values, cfg.nonneg)
    fod_scheme = shore.QSpaceSamples(np.full(len(dirs), cfg.fod_bvalue), dirs)

    carrier = net.VoxelDataset(dataset.signals, dataset.fod_coeffs, dataset.block_ids)
    splits = net.kfold_split(carrier, cfg.eval_folds, seed=cfg.train.seed)
    limit = len(splits) if cfg.max_folds is None else min(cfg.max_folds, len(splits))

    zeta0 = cfg.zeta0 if cfg.zeta0 is not None else shore.default_zeta0(sub_samples)
    all_acc = []
    all_rows = []
    folds = []
    audit_folds = []
    for fold_index, (train_rows, test_rows) in enumerate(splits[:limit]):
        train_blocks = np.unique(dataset.block_ids[train_rows])
        test_blocks = np.unique(dataset.block_ids[test_rows])
        overlap = np.intersect1d(train_blocks, test_blocks)
        if overlap.size:
            raise InvalidArgumentError(
                f"fold {fold_index}: blocks {overlap.tolist()} appear on both sides"
            )

        if optimize_scale:
            # the scale lives on the signal representation: optimize it on
            # the linear-space attenuations, then fit the log-space problem
            zeta = shore.optimize_zeta(
                lin_signals[train_rows], sub_samples, cfg.shore, zeta0,
                subsample=cfg.zeta_subsample,
                subsample_seed=_fold_seed(cfg.train.seed, fold_index),
            )
        else:
            zeta = zeta0

        inputs = shore.fit_shore_many(log_signals, sub_samples, cfg.shore, zeta)
        if target_kind == "sh":
            targets = sh.fit_sh_many(log_fod, dirs, cfg.sh_order, ridge=0.0)
        else:
            targets = shore.fit_shore_many(log_fod, fod_scheme, cfg.shore, zeta)

        in_norm = _Standardizer(inputs[train_rows])
        out_norm = _Standardizer(targets[train_rows])
        inputs_n = in_norm.forward(inputs)
        targets_n = out_norm.forward(targets)

        fit_rows = train_rows
        validation = None
        if cfg.nested:
            inner_carrier = net.VoxelDataset(
                inputs_n[train_rows], targets_n[train_rows], dataset.block_ids[train_rows]
            )
            inner = net.kfold_split(
                inner_carrier, cfg.train.k_folds,
                seed=_fold_seed(cfg.train.seed, fold_index) + 1,
            )
            inner_fit, inner_val = inner[0]
            fit_rows = train_rows[inner_fit]
            validation = (inputs_n[train_rows[inner_val]], targets_n[train_rows[inner_val]])

        model = net.build_model(
            inputs.shape[1], targets.shape[1], seed=_fold_seed(cfg.train.seed, fold_index)
        )
        trained, history = net.train(
            model,
            net.VoxelDataset(
                inputs_n[fit_rows], targets_n[fit_rows], dataset.block_ids[fit_rows]
            ),
            cfg.train,
            validation=validation,
        )

        predictions = out_norm.inverse(net.predict(trained, inputs_n[test_rows]))
        pred_sh, amplitudes = _predicted_fod_sh(
            predictions, target_kind, dirs, cfg, zeta, dataset.sh_order
        )
        if np.any(amplitudes <= 0):
            raise InvalidArgumentError("restored FOD amplitudes must be positive")
        fold_acc = np.array([
            sh.acc(sh.ShSeries(dataset.sh_order, pred_sh[i]), dataset.fod(row))
            for i, row in enumerate(test_rows)
        ])

        all_acc.append(fold_acc)
        all_rows.append(test_rows)
        median, mean = stats.summarize_report(fold_acc)
        folds.append({
            "fold": fold_index,
            "zeta": float(zeta),
            "zeta0": float(zeta0),
            "optimized": optimize_scale,
            "n_train_blocks": int(train_blocks.size),
            "n_test_blocks": int(test_blocks.size),
            "n_fit_rows": int(len(fit_rows)),
            "epochs_run": int(len(history)),
            "final_train_loss": float(history[-1]),
            "acc_median": median,
            "acc_mean": mean,
        })
        audit_folds.append({
            "fold": fold_index,
            "train_blocks": [int(b) for b in train_blocks],
            "test_blocks": [int(b) for b in test_blocks],
        })

    acc = np.concatenate(all_acc)
    rows = np.concatenate(all_rows)
    median, mean = stats.summarize_report(acc)
    return EvalReport(
        subcase=cfg.subcase,
        acc=acc,
        median=median,
        mean=mean,
        row_index=rows,
        folds=folds,
        audit={"leak_free": True, "folds": audit_folds},
        config=cfg.to_dict(),
    )


def compare_subcases(dataset, configs):
    """Run several subcases and intercompare their ACC distributions.

    All configs should share seeds and fold settings so the per-voxel
    ACC values pair up row by row. Pairwise two-sided signed-rank tests
    are Bonferroni-corrected as one family.
    """
    if len(configs) == 0:
        raise InvalidArgumentError("need at least one pipeline config")
    reports = [run_subcase_experiment(cfg, dataset) for cfg in configs]

    comparisons = []
    raw_p = []
    for i in range(len(reports)):
        for j in range(i + 1, len(reports)):
            a, b = reports[i], reports[j]
            if a.acc.size != b.acc.size or not np.array_equal(a.row_index, b.row_index):
                raise InvalidArgumentError(
                    f"cannot pair {a.subcase} with {b.subcase}: different test rows"
                )
            statistic, p = stats.wilcoxon_signed_rank(a.acc, b.acc)
            comparisons.append({
                "a": a.subcase, "b": b.subcase,
                "statistic": float(statistic), "p": float(p),
                "median_a": a.median, "median_b": b.median,
            })
            raw_p.append(p)
    if comparisons:
        corrected = stats.bonferroni(raw_p)
        for row, adjusted in zip(comparisons, corrected):
            row["p_bonferroni"] = float(adjusted)
    return reports, comparisons
