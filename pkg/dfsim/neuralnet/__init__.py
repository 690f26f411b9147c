from dfsim.neuralnet.checkpoint import load_checkpoint, save_checkpoint
from dfsim.neuralnet.model import batch_loss, forward, loss_and_grad, predict
from dfsim.neuralnet.optim import sgd_momentum_step
from dfsim.neuralnet.params import (
    ArchitectureConfig,
    ParamSet,
    Preset,
    average_params,
    init_params,
)
