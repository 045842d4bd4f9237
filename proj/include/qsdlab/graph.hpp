#pragma once

#include <cstddef>
#include <vector>

namespace qsdlab::graph {

/// Adjacency lists over 0..n-1.
using Adjacency = std::vector<std::vector<std::size_t>>;

Adjacency transpose(const Adjacency& adj);

/// Tarjan strongly connected components. Component ids are numbered in
/// reverse topological order of the condensation (a component only has edges
/// into lower-numbered components... see note in the implementation).
struct SccResult {
    std::vector<std::size_t> component_of;           // node -> component id
    std::vector<std::vector<std::size_t>> components;  // id -> member nodes
};
SccResult tarjan_scc(const Adjacency& adj);

/// Nodes from which any node of `targets` is reachable (targets included).
std::vector<bool> can_reach(const Adjacency& adj, const std::vector<bool>& targets);

/// Nodes reachable from any node of `sources` (sources included).
std::vector<bool> reachable_from(const Adjacency& adj, const std::vector<bool>& sources);

/// Period of a strongly connected subgraph given by `members` (gcd of cycle
/// lengths). Returns 1 for a single node with a self loop, 0 for a single
/// node without one.
int class_period(const Adjacency& adj, const std::vector<std::size_t>& members);

}  // namespace qsdlab::graph
