from hypothesis import given, strategies as st
import numpy as np

# Summary: Generate random input parameters for 
# numpy.cumsum and test properties
@given(st.data())
def test_numpy_cumsum(data):
  # Generating a list with varying length 
  # and integer elements
  a = data.draw(st.lists(
      st.integers(min_value=-10, max_value=10),
      min_size=0, max_size=10))

  # Generate random axis
  axis = data.draw(st.one_of(st.none(),
    st.integers(min_value=0, 
                max_value=a.ndim-1)))

  # Call numpy.cumsum with generated input
  cumsum_result = np.cumsum(a, axis=axis)

  # Test property: output shape
  # should be the same as input shape 
  # if axis is not None or input is 1-d array
  if axis is not None or a.ndim == 1:
    assert cumsum_result.shape == a.shape

  # Test property: output size should be the 
  # same as input size
  assert cumsum_result.size == a.size

  # Test property: cumsum(a)[-1] should be 
  # approximately equal to sum(a) for 
  # non floating-point values
  if not np.issubdtype(a.dtype, np.floating):
    np.testing.assert_almost_equal(
        cumsum_result.flatten()[-1], np.sum(a))
# End program
