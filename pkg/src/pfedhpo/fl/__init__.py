from pfedhpo.fl.checkpoints import CheckpointStore
from pfedhpo.fl.engine import (
    CourseResult,
    EvalResult,
    LocalTrainConfig,
    RoundStreams,
    aggregate,
    evaluate,
    local_train,
    run_course,
    run_round,
)
from pfedhpo.fl.models import (
    FEEDFORWARD,
    LOGISTIC,
    DivergenceError,
    ModelSpec,
    loss_and_grad,
    metrics,
    model_init,
)

__all__ = [
    "CheckpointStore", "CourseResult", "EvalResult", "LocalTrainConfig", "RoundStreams",
    "aggregate", "evaluate", "local_train", "run_course", "run_round",
    "FEEDFORWARD", "LOGISTIC", "DivergenceError", "ModelSpec", "loss_and_grad", "metrics",
    "model_init",
]
