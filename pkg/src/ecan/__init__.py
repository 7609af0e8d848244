"""Class-weighted, class-conditional MMD domain adaptation in plain numpy.

Modules:

* :mod:`ecan.kernels`     -- Gaussian multi-kernels and bandwidth selection
* :mod:`ecan.mmd`         -- biased / unbiased / class-weighted / class-conditional MMD^2 and gradients
* :mod:`ecan.model`       -- small MLP classifier, SGD with momentum, checkpoints
* :mod:`ecan.adaptation`  -- pseudo labels, class weights, joint objective, training loop
* :mod:`ecan.data`        -- feature CSVs, synthetic shifted domains, mini-batch streams
* :mod:`ecan.probe`       -- dataset-recognition and cross-dataset bias probes
* :mod:`ecan.gradcheck`   -- finite-difference checks of every analytic gradient
* :mod:`ecan.cli`         -- the ``ecan`` command line
"""
from .adaptation import (
    ABLATIONS,
    GAMMA_GRID,
    LAMBDA_GRID,
    EvalReport,
    PseudoLabelTable,
    TrainConfig,
    TrainResult,
    assign_pseudo_labels,
    compute_class_weights,
    evaluate,
    joint_loss,
    run_ablation,
    sensitivity_grid,
    train_ecan,
    train_source_only,
    warmup_weight,
)
from .data import (
    Dataset,
    EvalLabels,
    ShiftConfig,
    class_histogram,
    load_features,
    minibatch_stream,
    save_features,
    shift_a,
    synth_two_domain,
)
from .errors import ContractError, DegenerateInputError, FeatureParseError, InsufficientDataError, NumericalError
from .kernels import KernelSpec, default_spec, median_bandwidth, multi_kernel_eval, multi_kernel_grad
from .mmd import (
    ClassWeights,
    grad_conditional_mmd,
    grad_unbiased_mmd,
    grad_weighted_mmd,
    mmd2_biased,
    mmd2_conditional,
    mmd2_unbiased,
    mmd2_weighted,
)
from .model import ModelParams, OptimizerState, backward, forward, init_params, load_checkpoint, save_checkpoint, sgd_step
from .probe import CrossMatrix, SoftmaxTrainer, cross_dataset_matrix, dataset_recognition

__version__ = "0.1.0"
