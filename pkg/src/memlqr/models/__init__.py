from typing import Annotated

import numpy as np
from pydantic import BaseModel, BeforeValidator, ConfigDict


def frozen_array(value) -> np.ndarray:
    """
    Copy ``value`` into a read-only float array.

    :param value: Anything ``numpy.array`` accepts.
    :return: A write-protected ``float64`` array.
    :rtype: numpy.ndarray
    """
    arr = np.array(value, dtype=float)
    arr.setflags(write=False)
    return arr


Array = Annotated[np.ndarray, BeforeValidator(frozen_array)]


class Model(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    def __init__(self, **kwargs):
        """"""
        super().__init__(**kwargs)
