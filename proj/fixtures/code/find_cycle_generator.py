from hypothesis import strategies as st
import networkx as nx

# Summary: Hypothesis strategy for generating 
# graphs. Generate the number of nodes and 
# edges for the graph. Generate the edges 
# and create the graph.
@st.composite
def generate_graph(draw):
  num_nodes = draw(st.integers(min_value=1, 
      max_value=20))
  num_edges = draw(st.integers(min_value=1,
      max_value=num_nodes*(num_nodes-1)//2))

  node_list = list(range(num_nodes))
  edge_list = [draw(st.tuples(
      st.sampled_from(node_list), 
      st.sampled_from(node_list)).filter(
      lambda x: x[0] != x[1])) 
        for _ in range(num_edges)]
    
  G = nx.Graph()
  G.add_nodes_from(node_list)
  G.add_edges_from(edge_list)

  return G
# End program
