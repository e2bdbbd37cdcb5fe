#pragma once

#include <string>
#include <vector>

namespace dott {

// Binary dimension tree over variables 0..d-1. Node variable sets are
// contiguous ranges [first, last]; the left child holds [first, split],
// the right child [split+1, last]. nodes[0] is the root, stored in preorder.
struct DimensionTree {
    struct Node {
        int first = 0;
        int last = 0;
        int left = -1;
        int right = -1;
        int parent = -1;
        bool is_leaf() const { return left < 0; }
        int size() const { return last - first + 1; }
    };

    std::vector<Node> nodes;

    int dimension() const { return nodes.empty() ? 0 : nodes[0].size(); }
    const Node& root() const { return nodes.at(0); }
    const Node& node(int id) const { return nodes.at(id); }
    int depth() const;
    std::vector<int> internal_nodes() const; // preorder
    std::string describe() const;            // e.g. "{1}|{2,3}"
    void validate() const;

    bool operator==(const DimensionTree& o) const;
};

DimensionTree tt_tree(int d);
DimensionTree ht_tree(int d);

// split(first, last) returns the last variable of the left child.
template <typename Split>
DimensionTree binary_tree(int d, Split split);

namespace detail {
int append_subtree(DimensionTree& t, int first, int last, int parent, const std::vector<int>& splits_flat, int d);
}

// Tree from explicit splits: splits[first*d + last] = left-child last variable.
DimensionTree tree_from_splits(int d, const std::vector<int>& splits);

template <typename Split>
DimensionTree binary_tree(int d, Split split)
{
    std::vector<int> s(static_cast<size_t>(d) * d, -1);
    for (int a = 0; a < d; ++a)
        for (int b = a + 1; b < d; ++b) s[a * d + b] = split(a, b);
    return tree_from_splits(d, s);
}

} // namespace dott
