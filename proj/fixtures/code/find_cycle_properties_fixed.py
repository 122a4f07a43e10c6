import networkx as nx

# Property: the cycle is a non-empty list of edges
assert len(result) > 0

# Property: a graph with a cycle is not a forest
assert not nx.is_forest(input_args)

# Property: every edge of the cycle is an edge of the graph
assert all(input_args.has_edge(u, v) for u, v in result)
# End program
