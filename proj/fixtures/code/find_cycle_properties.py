import networkx as nx

# Property: the cycle is a non-empty list of edges
assert len(result) > 0

# Property: a graph with a cycle is not acyclic
assert not (nx.is_directed_acyclic_graph(input_args)
    or nx.is_undirected_acyclic_graph(input_args))
# End program
