from hypothesis import given, strategies as st
import numpy as np

# Summary: cumulative sums of random 1-d integer arrays
# (sample 1)
@given(st.data())
def test_numpy_cumsum(data):
  a = np.array(data.draw(st.lists(
      st.integers(min_value=-10, max_value=10),
      min_size=1, max_size=11)))

  result = np.cumsum(a)

  # Property: the result has the same size as the input
  assert result.size == a.size

  # Property: a 1-d input keeps its shape
  assert result.shape == a.shape

  # Property: the first element is the first input element
  assert result[0] == a[0]

  # Property: differences of the result recover the input
  assert np.array_equal(np.diff(result), a[1:])

  # Property: the last element equals the sum of the input
  assert result[-1] == np.sum(a)
# End program
