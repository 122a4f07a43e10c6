from hypothesis import given
import numpy as np

@given(generate_array())
def test_property(input_args):
  result = np.cumsum(input_args)
  # Property: the result is flat and as long as the input
  assert result.shape == (input_args.size,)
  # Property: the first element is the first input element
  assert result[0] == input_args.flatten()[0]
# End program
