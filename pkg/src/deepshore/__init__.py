"""Multi-shell diffusion signal fitting in a scale-optimized oscillator basis,
with a residual network regressing fiber orientation distributions.

The package covers the full batch pipeline: direction-set generation,
real even spherical harmonics, the Gaussian-Laguerre q-space basis with
an unsupervised per-dataset scale, a log-space non-negativity transform,
a small residual feed-forward regressor, a multi-tensor phantom for
validation, and the cross-validated experiment harness behind the
``deepshore`` command-line tool.
"""

__version__ = "0.1.0"

from .errors import (
    ContainerFormatError,
    DeepShoreError,
    InvalidArgumentError,
    OptimizationFailureError,
    SaturationError,
    SingularSystemError,
    UndefinedCorrelationError,
)
from .net import (
    MlpArchitecture,
    MlpModel,
    TrainConfig,
    VoxelDataset,
    build_model,
    forward,
    gradient_check,
    kfold_split,
    predict,
    train,
)
from .nonneg import NonNegConfig, clamp_log, exp_restore
from .phantom import (
    PhantomConfig,
    PhantomDataset,
    TensorCompartment,
    add_rician_noise,
    generate_dataset,
    ground_truth_fod,
    simulate_signal,
)
from .pipeline import (
    EvalReport,
    PipelineConfig,
    compare_subcases,
    run_subcase_experiment,
)
from .sh import (
    ShSeries,
    acc,
    eval_sh_basis,
    fit_sh,
    rotate_sh,
    sample_sh,
    sh_coeff_count,
)
from .shore import (
    QSpaceSamples,
    ShoreFitConfig,
    ShoreSeries,
    fit_shore,
    laguerre,
    optimize_zeta,
    radial_basis_g,
    reconstruct_signal,
    sh_fod_to_shore,
    shore_coeff_count,
    shore_design_matrix,
    shore_to_sh,
)
from .sphere import (
    DirectionSet,
    Rotation,
    SphereQuadrature,
    gauss_sphere_quadrature,
    generate_uniform_directions,
    random_rotation,
    rotate_directions,
)
from .stats import bonferroni, summarize_report, wilcoxon_signed_rank
