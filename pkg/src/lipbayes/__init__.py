"""Spectrally normalized variational heads and a label-noise workbench.

The package operates entirely on precomputed feature embeddings: synthetic
generators and an FSET1 feature-file format stand in for any image
backbone. The pieces compose as

    noise injection -> ELBO training -> MC inference
        -> suspicion fusion -> data-quality estimation
"""

from .coteach import (
    CoteachState,
    adaptive_forget_rate,
    coteach_step,
    coteach_train,
    scheduled_keep_rate,
)
from .estimator import MislabelDetector, VariationalHeadClassifier
from .evalkit import ScoredTruth, auc_pr, auc_roc, perturbation_sweep, precision_recall_at
from .experiment import ExperimentConfig, run_experiment
from .fileio import (
    FeatureFileError,
    read_checkpoint,
    read_features,
    read_noise_plan,
    read_suspicion_report,
    write_checkpoint,
    write_features,
    write_noise_plan,
    write_suspicion_report,
)
from .header import (
    BayesHeader,
    PredictiveSummary,
    TrainConfig,
    TrainingDivergedError,
    elbo_loss_and_grads,
    predict_mc,
    train,
)
from .noiselab import (
    FeatureDataset,
    NoisePlan,
    inject_random,
    inject_spce,
    make_blobs,
    make_confusable_blobs,
)
from .numkit import (
    DegenerateDistributionError,
    RngStream,
    bimodality_coefficient,
    gaussian_sample,
    power_iteration,
    svd_max_singular,
)
from .quality import (
    LookupHistogram,
    QualityModel,
    fit_response_model,
    leave_one_seed_out,
    lookup_histogram,
    posterior_eta,
    soft_metrics,
)
from .snlayer import VariationalLinear, backward, kl_to_prior, sample_forward
from .suspicion import SuspicionReport, fuse_adaptive, knn_suspicion, uncertainty_suspicion

__version__ = "0.1.0"
