from hypothesis import strategies as st
from datetime import timedelta

@st.composite
def sample_datetime_timedelta(draw):
  # weeks, hours and minutes add at most 7,002 days, so
  # the day range leaves room and cannot overflow
  days = draw(st.integers(-999990000, 999990000))
  seconds = draw(st.integers(0, 86399))
  microseconds = draw(st.integers(0, 999999))
  milliseconds = draw(st.integers(0, 1000))
  minutes = draw(st.integers(0, 60))
  hours = draw(st.integers(0, 24))
  weeks = draw(st.integers(0, 1000))

  delta = timedelta(days=days, seconds=seconds,
    microseconds=microseconds,
    milliseconds=milliseconds,
    minutes=minutes,
    hours=hours,
    weeks=weeks)

  return delta
# End program
