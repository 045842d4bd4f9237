#include "qsdlab/graph.hpp"

#include <algorithm>
#include <numeric>
#include <stack>

namespace qsdlab::graph {

Adjacency transpose(const Adjacency& adj) {
    Adjacency t(adj.size());
    for (std::size_t u = 0; u < adj.size(); ++u)
        for (std::size_t v : adj[u]) t[v].push_back(u);
    return t;
}

// Iterative Tarjan (explicit stack; recursion would overflow on path graphs
// of ~1e5 nodes). Components come out in reverse topological order: every
// edge leaving a component points to a component with a smaller id.
SccResult tarjan_scc(const Adjacency& adj) {
    const std::size_t n = adj.size();
    SccResult res;
    res.component_of.assign(n, static_cast<std::size_t>(-1));

    std::vector<int> index(n, -1), lowlink(n, 0);
    std::vector<bool> on_stack(n, false);
    std::vector<std::size_t> stack_nodes;
    int next_index = 0;

    struct Frame {
        std::size_t node;
        std::size_t edge;
    };

    for (std::size_t root = 0; root < n; ++root) {
        if (index[root] != -1) continue;
        std::vector<Frame> call_stack{{root, 0}};
        index[root] = lowlink[root] = next_index++;
        stack_nodes.push_back(root);
        on_stack[root] = true;

        while (!call_stack.empty()) {
            Frame& fr = call_stack.back();
            if (fr.edge < adj[fr.node].size()) {
                std::size_t w = adj[fr.node][fr.edge++];
                if (index[w] == -1) {
                    index[w] = lowlink[w] = next_index++;
                    stack_nodes.push_back(w);
                    on_stack[w] = true;
                    call_stack.push_back({w, 0});
                } else if (on_stack[w]) {
                    lowlink[fr.node] = std::min(lowlink[fr.node], index[w]);
                }
            } else {
                if (lowlink[fr.node] == index[fr.node]) {
                    std::vector<std::size_t> comp;
                    while (true) {
                        std::size_t w = stack_nodes.back();
                        stack_nodes.pop_back();
                        on_stack[w] = false;
                        comp.push_back(w);
                        if (w == fr.node) break;
                    }
                    std::size_t id = res.components.size();
                    for (std::size_t w : comp) res.component_of[w] = id;
                    res.components.push_back(std::move(comp));
                }
                std::size_t done = fr.node;
                call_stack.pop_back();
                if (!call_stack.empty())
                    lowlink[call_stack.back().node] =
                        std::min(lowlink[call_stack.back().node], lowlink[done]);
            }
        }
    }
    return res;
}

std::vector<bool> can_reach(const Adjacency& adj, const std::vector<bool>& targets) {
    return reachable_from(transpose(adj), targets);
}

std::vector<bool> reachable_from(const Adjacency& adj, const std::vector<bool>& sources) {
    std::vector<bool> seen(adj.size(), false);
    std::vector<std::size_t> todo;
    for (std::size_t i = 0; i < sources.size(); ++i)
        if (sources[i]) {
            seen[i] = true;
            todo.push_back(i);
        }
    while (!todo.empty()) {
        std::size_t u = todo.back();
        todo.pop_back();
        for (std::size_t v : adj[u])
            if (!seen[v]) {
                seen[v] = true;
                todo.push_back(v);
            }
    }
    return seen;
}

int class_period(const Adjacency& adj, const std::vector<std::size_t>& members) {
    if (members.empty()) return 0;
    std::vector<bool> in_class(adj.size(), false);
    for (std::size_t m : members) in_class[m] = true;
    if (members.size() == 1) {
        std::size_t u = members[0];
        for (std::size_t v : adj[u])
            if (v == u) return 1;
        return 0;
    }
    // BFS levels from an arbitrary member; the period is the gcd over intra-
    // class edges (u,v) of level(u) + 1 - level(v).
    std::vector<long> level(adj.size(), -1);
    std::vector<std::size_t> queue{members[0]};
    level[members[0]] = 0;
    std::size_t head = 0;
    while (head < queue.size()) {
        std::size_t u = queue[head++];
        for (std::size_t v : adj[u])
            if (in_class[v] && level[v] == -1) {
                level[v] = level[u] + 1;
                queue.push_back(v);
            }
    }
    long g = 0;
    for (std::size_t u : members)
        for (std::size_t v : adj[u])
            if (in_class[v]) g = std::gcd(g, level[u] + 1 - level[v]);
    g = std::abs(g);
    return static_cast<int>(g == 0 ? 0 : g);
}

}  // namespace qsdlab::graph
