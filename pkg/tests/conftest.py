"""Shared test utilities, re-exported from the package's gradient-check
module so tests and the CLI drive the identical machinery."""

from crosscal.gradcheck import (  # noqa: F401
    PARAM_FIELDS,
    attention_analytic_grad,
    attention_gradcheck_max_error,
    attention_loss,
    central_difference,
    make_attention_instance,
    pack_attention_vars,
    relative_error,
    unpack_attention_vars,
)
