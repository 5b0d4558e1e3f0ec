from .gradcheck import GradCheckReport, grad_check, numeric_grad, relative_error
from .optim import Adam, AdamState, adam_step
from .tensor import (
    Graph,
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    conv1d,
    flatten,
    is_grad_enabled,
    log_softmax,
    matmul,
    mean,
    mul,
    no_grad,
    pdist,
    relu,
    reshape,
    softmax,
    sqdiff,
    square,
    sub,
    take_rows,
    tsum,
    upsample2,
)
