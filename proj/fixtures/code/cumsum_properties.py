import numpy as np

# Property: the result has the same size as the input
assert result.size == input_args.size

# Property: the result keeps the shape of a 1-d input
if input_args.ndim == 1:
  assert result.shape == input_args.shape

# Property: the last element equals the sum of the
# input for integer arrays
if not np.issubdtype(input_args.dtype, np.floating):
  assert result.flatten()[-1] == np.sum(input_args)
# End program
