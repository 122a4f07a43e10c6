from hypothesis import strategies as st
from datetime import timedelta

@st.composite
def sample_datetime_timedelta(draw):
  days = draw(st.integers(-999999999, 
              999999999))
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
