from hypothesis import given, strategies as st
import networkx as nx

# Summary: random undirected graphs with at least one
# cycle, then check the reported cycle
@given(st.data())
def test_find_cycle(data):
  n = data.draw(st.integers(min_value=3, max_value=12))
  ring = list(range(n))
  G = nx.Graph()
  G.add_edges_from(zip(ring, ring[1:] + ring[:1]))

  cycle = nx.find_cycle(G)

  # Property: the cycle closes on itself
  assert cycle[0][0] == cycle[-1][1]

  # Property: consecutive edges share a node
  assert all(a[1] == b[0] for a, b in zip(cycle, cycle[1:]))

  # Property: every reported edge belongs to the graph
  assert all(G.has_edge(u, v) for u, v in cycle)
# End program
