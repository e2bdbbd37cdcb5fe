#include "dott/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dott/error.hpp"

namespace dott {

namespace {

using nlohmann::json;

constexpr char magic[8] = {'D', 'O', 'T', 'T', 'S', 'E', 'R', '\0'};

class Writer {
public:
    void u32(std::uint32_t v) { le(v, 4); }
    void u64(std::uint64_t v) { le(v, 8); }
    void f64(double x) { u64(std::bit_cast<std::uint64_t>(x)); }
    void array(const double* p, Eigen::Index n)
    {
        for (Eigen::Index i = 0; i < n; ++i) f64(p[i]);
    }
    void matrix(const Eigen::MatrixXd& m) { array(m.data(), m.size()); }
    void vector(const Eigen::VectorXd& v) { array(v.data(), v.size()); }
    void raw(const std::string& s) { out += s; }
    std::string out;

private:
    void le(std::uint64_t v, int bytes)
    {
        for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
};

class Reader {
public:
    explicit Reader(const std::string& s) : in(s) {}
    std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
    std::uint64_t u64() { return le(8); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string raw(std::size_t n)
    {
        need(n);
        std::string s = in.substr(pos, n);
        pos += n;
        return s;
    }
    Eigen::MatrixXd matrix(Eigen::Index rows, Eigen::Index cols)
    {
        if (rows < 0 || cols < 0) throw InvalidArgument("serialized file: negative shape");
        Eigen::MatrixXd m(rows, cols);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = f64();
        return m;
    }
    Eigen::VectorXd vector(Eigen::Index n) { return matrix(n, 1); }
    bool done() const { return pos == in.size(); }

private:
    void need(std::size_t n) const
    {
        if (pos + n > in.size()) throw InvalidArgument("serialized file is truncated");
    }
    std::uint64_t le(int bytes)
    {
        need(bytes);
        std::uint64_t v = 0;
        for (int i = 0; i < bytes; ++i) v |= std::uint64_t(static_cast<unsigned char>(in[pos + i])) << (8 * i);
        pos += bytes;
        return v;
    }
    const std::string& in;
    std::size_t pos = 0;
};

json shape_of(const Eigen::MatrixXd& m) { return json::array({m.rows(), m.cols()}); }

json grids_header(const std::vector<Grid>& grids)
{
    json out = json::array();
    for (const auto& g : grids) out.push_back({{"kind", to_string(g.kind)}, {"n", g.size()}, {"a", g.a}, {"b", g.b}});
    return out;
}

void write_grids(Writer& w, const std::vector<Grid>& grids)
{
    for (const auto& g : grids) {
        w.vector(g.nodes);
        w.vector(g.weights);
    }
}

std::vector<Grid> read_grids(Reader& r, const json& hdr)
{
    std::vector<Grid> out;
    for (const auto& g : hdr) {
        const int n = g.at("n").get<int>();
        const std::string kind = g.at("kind").get<std::string>();
        const double a = g.at("a").get<double>(), b = g.at("b").get<double>();
        Grid grid;
        if (kind == "fourier") {
            grid = fourier_grid(n, b - a);
            grid.a = a;
            grid.b = b;
        } else if (kind == "gauss_legendre") {
            grid = gauss_legendre_grid(n, a, b);
        } else {
            throw InvalidArgument("serialized file: unknown grid kind '" + kind + "'");
        }
        grid.nodes = r.vector(n);
        grid.weights = r.vector(n);
        out.push_back(std::move(grid));
    }
    return out;
}

json node_shape(const NodeExpansion& e)
{
    json lc = json::array(), rc = json::array();
    for (const auto& c : e.left_children) lc.push_back(node_shape(c));
    for (const auto& c : e.right_children) rc.push_back(node_shape(c));
    return {{"r", e.rank()},
            {"s", e.spectrum.size()},
            {"ll", shape_of(e.left_leaf)},
            {"rl", shape_of(e.right_leaf)},
            {"lc", lc},
            {"rc", rc}};
}

void write_node(Writer& w, const NodeExpansion& e)
{
    w.vector(e.lambdas);
    w.vector(e.spectrum);
    w.matrix(e.left_leaf);
    w.matrix(e.right_leaf);
    for (const auto& c : e.left_children) write_node(w, c);
    for (const auto& c : e.right_children) write_node(w, c);
}

NodeExpansion read_node(Reader& r, const json& s)
{
    NodeExpansion e;
    e.lambdas = r.vector(s.at("r").get<Eigen::Index>());
    e.spectrum = r.vector(s.at("s").get<Eigen::Index>());
    e.left_leaf = r.matrix(s.at("ll")[0].get<Eigen::Index>(), s.at("ll")[1].get<Eigen::Index>());
    e.right_leaf = r.matrix(s.at("rl")[0].get<Eigen::Index>(), s.at("rl")[1].get<Eigen::Index>());
    for (const auto& c : s.at("lc")) e.left_children.push_back(read_node(r, c));
    for (const auto& c : s.at("rc")) e.right_children.push_back(read_node(r, c));
    return e;
}

json family_shape(const ModeFamily& f)
{
    json c = json::array();
    for (const auto& k : f.children) c.push_back(family_shape(k));
    return {{"m", shape_of(f.modes)}, {"f", shape_of(f.finals)}, {"c", c}};
}

void write_family(Writer& w, const ModeFamily& f)
{
    w.matrix(f.modes);
    w.matrix(f.finals);
    for (const auto& c : f.children) write_family(w, c);
}

ModeFamily read_family(Reader& r, const json& s)
{
    ModeFamily f;
    f.modes = r.matrix(s.at("m")[0].get<Eigen::Index>(), s.at("m")[1].get<Eigen::Index>());
    f.finals = r.matrix(s.at("f")[0].get<Eigen::Index>(), s.at("f")[1].get<Eigen::Index>());
    for (const auto& c : s.at("c")) f.children.push_back(read_family(r, c));
    return f;
}

std::string frame(const json& header, const std::string& payload)
{
    Writer w;
    w.raw(std::string(magic, sizeof magic));
    w.u32(serial_format_version);
    const std::string h = header.dump();
    w.u64(h.size());
    w.raw(h);
    w.raw(payload);
    return w.out;
}

json open_frame(Reader& r, const std::string& expected_kind)
{
    if (r.raw(sizeof magic) != std::string(magic, sizeof magic)) throw InvalidArgument("not a serialized dott file");
    const auto version = r.u32();
    if (version != serial_format_version)
        throw InvalidArgument("unsupported serialization version " + std::to_string(version));
    const auto len = r.u64();
    json header;
    try {
        header = json::parse(r.raw(len));
    } catch (const json::exception& e) {
        throw InvalidArgument(std::string("serialized header: ") + e.what());
    }
    if (header.value("kind", "") != expected_kind)
        throw InvalidArgument("serialized file holds '" + header.value("kind", "") + "', expected '" + expected_kind + "'");
    return header;
}

template <typename F>
auto guarded(F&& f)
{
    try {
        return f();
    } catch (const json::exception& e) {
        throw InvalidArgument(std::string("serialized header: ") + e.what());
    }
}

void write_file(const std::string& path, const std::string& bytes)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidArgument("cannot open '" + path + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InvalidArgument("write to '" + path + "' failed");
}

std::string read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidArgument("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

std::string to_bytes(const HierarchicalDecomposition& h)
{
    json tree = json::array();
    for (const auto& n : h.tree.nodes) tree.push_back({n.first, n.last, n.left, n.right, n.parent});
    json header = {{"kind", "decomposition"},
                   {"tree", tree},
                   {"grids", grids_header(h.grids)},
                   {"ranks", h.ranks()},
                   {"root", node_shape(h.root)}};
    Writer w;
    write_grids(w, h.grids);
    write_node(w, h.root);
    return frame(header, w.out);
}

HierarchicalDecomposition decomposition_from_bytes(const std::string& bytes)
{
    Reader r(bytes);
    const json header = open_frame(r, "decomposition");
    return guarded([&] {
        HierarchicalDecomposition h;
        for (const auto& n : header.at("tree")) {
            DimensionTree::Node node;
            node.first = n.at(0).get<int>();
            node.last = n.at(1).get<int>();
            node.left = n.at(2).get<int>();
            node.right = n.at(3).get<int>();
            node.parent = n.at(4).get<int>();
            h.tree.nodes.push_back(node);
        }
        h.tree.validate();
        h.grids = read_grids(r, header.at("grids"));
        if (static_cast<int>(h.grids.size()) != h.tree.dimension())
            throw InvalidArgument("serialized file: grid count does not match the tree");
        h.root = read_node(r, header.at("root"));
        if (!r.done()) throw InvalidArgument("serialized file has trailing bytes");
        return h;
    });
}

std::string to_bytes(const DoTtState& s)
{
    json header = {{"kind", "do_checkpoint"},
                   {"time", s.time},
                   {"grids", grids_header(s.grids)},
                   {"ranks", ranks(s.root, s.dimension())},
                   {"root", family_shape(s.root)}};
    Writer w;
    w.f64(s.time);
    write_grids(w, s.grids);
    write_family(w, s.root);
    return frame(header, w.out);
}

DoTtState checkpoint_from_bytes(const std::string& bytes)
{
    Reader r(bytes);
    const json header = open_frame(r, "do_checkpoint");
    return guarded([&] {
        DoTtState s;
        s.time = r.f64();
        s.grids = read_grids(r, header.at("grids"));
        s.root = read_family(r, header.at("root"));
        if (!r.done()) throw InvalidArgument("serialized file has trailing bytes");
        return s;
    });
}

void save(const HierarchicalDecomposition& h, const std::string& path) { write_file(path, to_bytes(h)); }
void save(const DoTtState& s, const std::string& path) { write_file(path, to_bytes(s)); }
HierarchicalDecomposition load_decomposition(const std::string& path) { return decomposition_from_bytes(read_file(path)); }
DoTtState load_checkpoint(const std::string& path) { return checkpoint_from_bytes(read_file(path)); }

} // namespace dott
