from hypothesis import given
import numpy as np

@given(generate_array())
def test_cumsum(a):
  # The output keeps the input shape only for
  # 1-d input; otherwise the input is flattened
  out_shape = np.cumsum(a).shape
  if a.ndim == 1:
    assert out_shape == a.shape
  else:
    assert out_shape == (a.size,)
# End program
