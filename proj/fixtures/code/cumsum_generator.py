from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp
import numpy as np

# Summary: arrays of one to three dimensions holding
# small integers or floats
@st.composite
def generate_array(draw):
  dtype = draw(st.sampled_from([np.int64, np.float64]))
  shape = draw(hnp.array_shapes(min_dims=1, max_dims=3,
                                min_side=1, max_side=5))
  if dtype is np.int64:
    elements = st.integers(min_value=-10, max_value=10)
  else:
    elements = st.floats(min_value=-10, max_value=10,
                         allow_nan=False)
  return draw(hnp.arrays(dtype, shape, elements=elements))
# End program
