#include "dott/tree.hpp"

#include <algorithm>
#include <functional>

#include "dott/error.hpp"

namespace dott {

namespace detail {

int append_subtree(DimensionTree& t, int first, int last, int parent, const std::vector<int>& splits, int d)
{
    int id = static_cast<int>(t.nodes.size());
    t.nodes.push_back({first, last, -1, -1, parent});
    if (first == last) return id;
    int s = splits[first * d + last];
    if (s < first || s >= last) throw InvalidArgument("dimension tree: split outside node range");
    int l = append_subtree(t, first, s, id, splits, d);
    int r = append_subtree(t, s + 1, last, id, splits, d);
    t.nodes[id].left = l;
    t.nodes[id].right = r;
    return id;
}

} // namespace detail

DimensionTree tree_from_splits(int d, const std::vector<int>& splits)
{
    if (d < 2) throw InvalidArgument("dimension tree needs d >= 2");
    if (splits.size() != static_cast<size_t>(d) * d) throw InvalidArgument("dimension tree: split table size");
    DimensionTree t;
    detail::append_subtree(t, 0, d - 1, -1, splits, d);
    return t;
}

DimensionTree tt_tree(int d)
{
    return binary_tree(d, [](int a, int) { return a; });
}

DimensionTree ht_tree(int d)
{
    return binary_tree(d, [](int a, int b) { return a + (b - a + 1 + 1) / 2 - 1; });
}

int DimensionTree::depth() const
{
    std::function<int(int)> rec = [&](int id) -> int {
        const Node& n = nodes[id];
        return n.is_leaf() ? 0 : 1 + std::max(rec(n.left), rec(n.right));
    };
    return nodes.empty() ? 0 : rec(0);
}

std::vector<int> DimensionTree::internal_nodes() const
{
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(nodes.size()); ++i)
        if (!nodes[i].is_leaf()) out.push_back(i);
    return out;
}

std::string DimensionTree::describe() const
{
    auto set = [&](const Node& n) {
        std::string s = "{";
        for (int v = n.first; v <= n.last; ++v) s += (v > n.first ? "," : "") + std::to_string(v + 1);
        return s + "}";
    };
    std::string out;
    for (int id : internal_nodes()) {
        if (!out.empty()) out += " ";
        out += set(nodes[nodes[id].left]) + "|" + set(nodes[nodes[id].right]);
    }
    return out;
}

void DimensionTree::validate() const
{
    if (nodes.empty()) throw InvalidArgument("dimension tree is empty");
    for (const Node& n : nodes) {
        if (n.first > n.last) throw InvalidArgument("dimension tree: empty node");
        if (n.is_leaf() != (n.right < 0)) throw InvalidArgument("dimension tree: half-leaf node");
        if (n.is_leaf()) {
            if (n.first != n.last) throw InvalidArgument("dimension tree: leaf is not a singleton");
            continue;
        }
        const Node& l = nodes.at(n.left);
        const Node& r = nodes.at(n.right);
        if (l.first != n.first || r.last != n.last || l.last + 1 != r.first)
            throw InvalidArgument("dimension tree: children do not partition the parent");
    }
}

bool DimensionTree::operator==(const DimensionTree& o) const
{
    if (nodes.size() != o.nodes.size()) return false;
    for (size_t i = 0; i < nodes.size(); ++i) {
        const Node &a = nodes[i], &b = o.nodes[i];
        if (a.first != b.first || a.last != b.last || a.left != b.left || a.right != b.right) return false;
    }
    return true;
}

} // namespace dott
