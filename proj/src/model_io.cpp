#include "xfl/learner.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace xfl {

namespace {

constexpr std::string_view kMagic = "XFLMODEL";

class Writer {
public:
    void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v)
    {
        for (int i = 0; i < 4; ++i)
            u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v)
    {
        for (int i = 0; i < 8; ++i)
            u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void str(std::string_view s)
    {
        u64(s.size());
        out_.append(s);
    }
    void raw(std::string_view s) { out_.append(s); }

    void linear(const SparseLinear& l)
    {
        u64(l.index.size());
        for (std::size_t i = 0; i < l.index.size(); ++i) {
            u32(l.index[i]);
            f64(l.weight[i]);
        }
        f64(l.bias);
    }

    std::string take() { return std::move(out_); }

private:
    std::string out_;
};

class Reader {
public:
    explicit Reader(std::string_view in) : in_(in) {}

    std::uint8_t u8()
    {
        need(1);
        return static_cast<std::uint8_t>(in_[pos_++]);
    }
    std::uint32_t u32()
    {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(u8()) << (8 * i);
        return v;
    }
    std::uint64_t u64()
    {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(u8()) << (8 * i);
        return v;
    }
    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str()
    {
        auto n = count(1);
        std::string s(in_.substr(pos_, n));
        pos_ += n;
        return s;
    }
    std::string_view raw(std::size_t n)
    {
        need(n);
        auto s = in_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    // Element count, bounded by the bytes left so corrupt input cannot
    // trigger huge allocations.
    std::size_t count(std::size_t min_element_bytes)
    {
        auto n = u64();
        if (n > (in_.size() - pos_) / min_element_bytes)
            throw FormatError("unrecognized format: model file is truncated or corrupt");
        return static_cast<std::size_t>(n);
    }
    bool done() const { return pos_ == in_.size(); }

    SparseLinear linear(std::size_t width)
    {
        SparseLinear l;
        auto n = count(12);
        l.index.resize(n);
        l.weight.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            l.index[i] = u32();
            l.weight[i] = f64();
            if (l.index[i] >= width)
                throw FormatError("unrecognized format: separator index out of range");
        }
        l.bias = f64();
        return l;
    }

private:
    void need(std::size_t n)
    {
        if (in_.size() - pos_ < n)
            throw FormatError("unrecognized format: model file is truncated or corrupt");
    }

    std::string_view in_;
    std::size_t pos_ = 0;
};

ModelHeader read_header_from(Reader& r)
{
    if (r.raw(kMagic.size()) != kMagic)
        throw FormatError("unrecognized format: not a model file");
    ModelHeader h;
    h.format_version = r.u32();
    h.feature_layout_version = r.u32();
    h.label_space_digest = r.str();
    return h;
}

} // namespace

std::string XflModel::serialize() const
{
    Writer w;
    w.raw(kMagic);
    w.u32(kModelFormatVersion);
    w.u32(kFeatureLayoutVersion);
    w.str(label_space_digest);
    w.u64(num_labels);
    w.u64(width);

    w.u64(hp.trees);
    w.u64(hp.max_leaf);
    w.u64(hp.k);
    w.f64(hp.alpha);
    w.f64(hp.gamma);
    w.u64(hp.max_split_iters);
    w.u64(hp.rarity_cutoff);
    w.u64(hp.seed);
    w.u64(hp.leaf_top_k);
    w.f64(hp.l1);
    w.u64(hp.separator_epochs);
    w.f64(hp.separator_tol);

    w.f64(threshold);
    w.u8(calibrated ? 1 : 0);

    w.u64(trees.size());
    for (const auto& t : trees) {
        w.u64(t.nodes.size());
        for (const auto& n : t.nodes) {
            w.i32(n.left);
            w.i32(n.right);
            w.linear(n.separator);
            w.u64(n.leaf.size());
            for (const auto& e : n.leaf) {
                w.u32(e.label);
                w.f64(e.score);
            }
        }
    }
    w.u64(rare.size());
    for (const auto& r : rare) {
        w.u32(r.label);
        w.linear(r.scorer);
    }
    return w.take();
}

XflModel XflModel::deserialize(std::string_view bytes, const LabelSpace* space)
{
    Reader r(bytes);
    auto header = read_header_from(r);
    if (header.format_version != kModelFormatVersion)
        throw FormatError("unrecognized format: model format version " + std::to_string(header.format_version) +
                          " (expected " + std::to_string(kModelFormatVersion) + ")");
    if (header.feature_layout_version != kFeatureLayoutVersion)
        throw FormatError("model was built with feature layout " + std::to_string(header.feature_layout_version) +
                          ", this build uses " + std::to_string(kFeatureLayoutVersion));
    if (space != nullptr && header.label_space_digest != space->digest())
        throw Error("model was trained against a different label space (digest " + header.label_space_digest +
                    ", given " + space->digest() + ")");

    XflModel m;
    m.label_space_digest = header.label_space_digest;
    m.num_labels = r.u64();
    m.width = r.u64();
    if (space != nullptr && m.num_labels != space->size())
        throw Error("model label count does not match the label space");

    m.hp.trees = r.u64();
    m.hp.max_leaf = r.u64();
    m.hp.k = r.u64();
    m.hp.alpha = r.f64();
    m.hp.gamma = r.f64();
    m.hp.max_split_iters = r.u64();
    m.hp.rarity_cutoff = r.u64();
    m.hp.seed = r.u64();
    m.hp.leaf_top_k = r.u64();
    m.hp.l1 = r.f64();
    m.hp.separator_epochs = r.u64();
    m.hp.separator_tol = r.f64();
    m.threshold = r.f64();
    m.calibrated = r.u8() != 0;

    auto label_ok = [&](LabelId l) {
        if (l >= m.num_labels)
            throw FormatError("unrecognized format: label id out of range");
        return l;
    };

    m.trees.resize(r.count(8));
    for (auto& t : m.trees) {
        t.nodes.resize(r.count(32));
        for (auto& n : t.nodes) {
            n.left = r.i32();
            n.right = r.i32();
            n.separator = r.linear(m.width);
            n.leaf.resize(r.count(12));
            for (auto& e : n.leaf) {
                e.label = label_ok(r.u32());
                e.score = r.f64();
            }
        }
        // Children must point forward so routing terminates.
        for (std::size_t i = 0; i < t.nodes.size(); ++i) {
            const auto& n = t.nodes[i];
            if ((n.left < 0) != (n.right < 0))
                throw FormatError("unrecognized format: malformed tree node");
            if (n.left >= 0 && (static_cast<std::size_t>(n.left) <= i || static_cast<std::size_t>(n.left) >= t.nodes.size() ||
                                static_cast<std::size_t>(n.right) <= i || static_cast<std::size_t>(n.right) >= t.nodes.size()))
                throw FormatError("unrecognized format: tree child index out of range");
        }
        if (t.nodes.empty())
            throw FormatError("unrecognized format: empty tree");
    }
    m.rare.resize(r.count(20));
    for (auto& rs : m.rare) {
        rs.label = label_ok(r.u32());
        rs.scorer = r.linear(m.width);
    }
    if (!r.done())
        throw FormatError("unrecognized format: trailing bytes after model");
    if (m.trees.empty())
        throw FormatError("unrecognized format: model has no trees");
    return m;
}

namespace {

std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error("cannot read model " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

} // namespace

void XflModel::save(const std::filesystem::path& path) const
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error("cannot write model " + path.string());
    auto bytes = serialize();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw Error("failed writing model " + path.string());
}

XflModel XflModel::load(const std::filesystem::path& path, const LabelSpace& space)
{
    return deserialize(read_file(path), &space);
}

ModelHeader XflModel::read_header(const std::filesystem::path& path)
{
    auto bytes = read_file(path);
    Reader r(bytes);
    return read_header_from(r);
}

} // namespace xfl
