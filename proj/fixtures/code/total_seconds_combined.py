from hypothesis import given, strategies as st
from datetime import timedelta

# Summary: random durations within a year, then
# compare total_seconds with the stored fields
@given(st.data())
def test_total_seconds(data):
  days = data.draw(st.integers(min_value=-365, max_value=365))
  seconds = data.draw(st.integers(min_value=0, max_value=86399))
  t = timedelta(days=days, seconds=seconds)

  total = t.total_seconds()

  # Property: the result is a float
  assert isinstance(total, float)

  # Property: the result matches the stored fields
  assert total == t.days * 86400 + t.seconds + t.microseconds / 1e6
# End program
