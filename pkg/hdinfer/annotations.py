from typing import Annotated

import numpy as np

Alpha = Annotated[float, "Level of a test or confidence set, in (0, 1)"]
ColIdx = Annotated[int, "0-based column index"]
Count = Annotated[int, "Count"]
FilePath = Annotated[str, "File path"]
Lambda = Annotated[float, "Nonnegative regularization level"]
Matrix = Annotated[np.ndarray, "Dense 2d float array"]
Probability = Annotated[float, "Probability"]
Seed = Annotated[int, "64-bit seed"]
Vector = Annotated[np.ndarray, "Dense 1d float array"]
