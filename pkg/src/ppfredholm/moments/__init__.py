"""First- and second-order moment models and their estimation."""
from .estimation import (
    Admissibility,
    LogLinearFit,
    admissibility_check,
    estimate_pcf_kernel,
    fit_intensity_loglinear,
    fit_intensity_piecewise_mle,
    fit_pcf_nls,
    translation_weights,
)
from .intensity import (
    BandedDistanceDesign,
    CallableThinning,
    ConstantIntensity,
    ConstantThinning,
    CovariateField,
    DistanceField,
    IntensityModel,
    LinearDesign,
    LinearThinning,
    LogLinearIntensity,
    PiecewiseIntensity,
    RasterField,
    StepThinning,
    ThinnedClusterIntensity,
    ThinningField,
    eval_intensity,
    half_plane_partition,
)
from .io import read_covariate, read_pcf, write_pcf
from .pcf import (
    EmpiricalPCF,
    ExpPlusOnePCF,
    ExpScaledPCF,
    MaternPCF,
    PairCorrelationModel,
    PoissonPCF,
    eval_pcf,
    from_params,
)
