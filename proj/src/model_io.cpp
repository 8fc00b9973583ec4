// Binary containers for models ("CCNN") and evaluation sets ("CCEV").
//
// CCNN: magic, u32 version, u64 manifest length, JSON manifest, f32 blobs.
// CCEV: magic, u32 version, u32 num_samples, u32 num_classes, 3 x u32 sample
//       shape, f32 samples, u32 labels.
// All integers and reals little-endian.

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "ccnn/model.hpp"

namespace ccnn {

static_assert(std::endian::native == std::endian::little, "containers are read and written in host byte order");

namespace {

using json = nlohmann::json;
using Bytes = std::vector<std::uint8_t>;

constexpr char kModelMagic[4] = {'C', 'C', 'N', 'N'};
constexpr char kEvalMagic[4] = {'C', 'C', 'E', 'V'};

template <typename T>
void put(Bytes& out, T value) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    out.insert(out.end(), p, p + sizeof(T));
}

void put_floats(Bytes& out, const std::vector<float>& values) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(values.data());
    out.insert(out.end(), p, p + values.size() * sizeof(float));
}

class Reader {
public:
    explicit Reader(const Bytes& bytes) : bytes_(bytes) {}

    template <typename T>
    T get(const char* what) {
        need(sizeof(T), what);
        T value;
        std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }

    std::vector<float> floats(std::size_t count, const char* what) {
        need(count * sizeof(float), what);
        std::vector<float> out(count);
        if (count) std::memcpy(out.data(), bytes_.data() + pos_, count * sizeof(float));
        pos_ += count * sizeof(float);
        return out;
    }

    std::string string(std::size_t len, const char* what) {
        need(len, what);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), len);
        pos_ += len;
        return s;
    }

    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void need(std::size_t n, const char* what) const {
        if (bytes_.size() - pos_ < n) throw Error(ErrorCode::truncated_blob, std::string("file ends inside ") + what);
    }

    const Bytes& bytes_;
    std::size_t pos_ = 0;
};

void check_magic(const Bytes& bytes, const char (&magic)[4]) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), magic, 4) != 0) {
        throw Error(ErrorCode::bad_magic, std::string("expected '") + std::string(magic, 4) + "'");
    }
}

Bytes read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::io_failure, "cannot open '" + path.string() + "'");
    return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const Bytes& bytes, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io_failure, "cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::io_failure, "short write to '" + path.string() + "'");
}

json blob_entry(const Tensor& t, std::uint64_t& offset) {
    json j = {{"shape", t.shape}, {"offset", offset}, {"count", t.size()}};
    offset += t.size() * sizeof(float);
    return j;
}

json layer_manifest(const LayerSpec& layer) {
    json j = {{"name", layer.name}, {"kind", layer.kind_name()}};
    if (const auto* c = std::get_if<Conv>(&layer.kind)) {
        j["in_ch"] = c->in_ch;
        j["out_ch"] = c->out_ch;
        j["kernel_h"] = c->kernel_h;
        j["kernel_w"] = c->kernel_w;
        j["stride"] = c->stride;
        j["pad"] = c->pad;
    } else if (const auto* f = std::get_if<FullyConnected>(&layer.kind)) {
        j["in_features"] = f->in_features;
        j["out_features"] = f->out_features;
    } else if (const auto* p = std::get_if<MaxPool>(&layer.kind)) {
        j["size"] = p->size;
        j["stride"] = p->stride;
    }
    return j;
}

LayerKind parse_kind(const json& j) {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "conv") {
        return Conv{j.at("in_ch").get<std::size_t>(),    j.at("out_ch").get<std::size_t>(),
                    j.at("kernel_h").get<std::size_t>(), j.at("kernel_w").get<std::size_t>(),
                    j.at("stride").get<std::size_t>(),   j.at("pad").get<std::size_t>()};
    }
    if (kind == "fc") return FullyConnected{j.at("in_features").get<std::size_t>(), j.at("out_features").get<std::size_t>()};
    if (kind == "relu") return ReLU{};
    if (kind == "maxpool") return MaxPool{j.at("size").get<std::size_t>(), j.at("stride").get<std::size_t>()};
    if (kind == "softmax") return Softmax{};
    throw Error(ErrorCode::unknown_layer_kind, "'" + kind + "'");
}

Tensor read_blob(const json& entry, const Bytes& bytes, std::size_t blob_base, const std::string& what) {
    Shape shape = entry.at("shape").get<Shape>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const auto count = entry.at("count").get<std::uint64_t>();
    const auto expected = shape_size(shape);
    if (count < expected) {
        throw Error(ErrorCode::truncated_blob, what + " holds " + std::to_string(count) + " of " +
                                                   std::to_string(expected) + " values");
    }
    if (count > expected) throw Error(ErrorCode::shape_mismatch, what + " holds more values than its shape");
    const auto available = bytes.size() - blob_base;
    if (offset > available || count * sizeof(float) > available - offset) {
        throw Error(ErrorCode::truncated_blob, what + " runs past the end of the file");
    }
    std::vector<float> data(count);
    if (count) std::memcpy(data.data(), bytes.data() + blob_base + offset, count * sizeof(float));
    return Tensor(std::move(shape), std::move(data));
}

}  // namespace

Bytes encode_model(const ModelGraph& graph) {
    validate(graph);
    json manifest;
    manifest["input_shape"] = {graph.input_shape.c, graph.input_shape.h, graph.input_shape.w};
    manifest["layers"] = json::array();
    std::uint64_t offset = 0;
    for (const auto& layer : graph.layers) {
        json j = layer_manifest(layer);
        if (layer.has_weights()) {
            const auto& p = graph.params(layer);
            j["weight"] = blob_entry(p.weight, offset);
            j["bias"] = blob_entry(p.bias, offset);
        }
        manifest["layers"].push_back(std::move(j));
    }
    const std::string text = manifest.dump();

    Bytes out(std::begin(kModelMagic), std::end(kModelMagic));
    put<std::uint32_t>(out, kModelFormatVersion);
    put<std::uint64_t>(out, text.size());
    out.insert(out.end(), text.begin(), text.end());
    for (const auto& layer : graph.layers) {
        if (!layer.has_weights()) continue;
        const auto& p = graph.params(layer);
        put_floats(out, p.weight.data);
        put_floats(out, p.bias.data);
    }
    return out;
}

ModelGraph decode_model(const Bytes& bytes) {
    check_magic(bytes, kModelMagic);
    Reader r(bytes);
    r.string(4, "magic");
    const auto version = r.get<std::uint32_t>("version");
    if (version != kModelFormatVersion) {
        throw Error(ErrorCode::unsupported_version, "model format version " + std::to_string(version));
    }
    const auto manifest_len = r.get<std::uint64_t>("manifest length");
    if (manifest_len > r.remaining()) throw Error(ErrorCode::truncated_blob, "file ends inside the manifest");
    const std::string text = r.string(static_cast<std::size_t>(manifest_len), "manifest");
    const std::size_t blob_base = r.pos();

    json manifest;
    try {
        manifest = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::parse_error, std::string("manifest: ") + e.what());
    }

    ModelGraph graph;
    try {
        const auto in = manifest.at("input_shape").get<std::vector<std::size_t>>();
        if (in.size() != 3) throw Error(ErrorCode::shape_mismatch, "input_shape must have three dimensions");
        graph.input_shape = {in[0], in[1], in[2]};
        for (const auto& j : manifest.at("layers")) {
            LayerSpec layer{j.at("name").get<std::string>(), parse_kind(j)};
            if (layer.has_weights()) {
                LayerParams p{read_blob(j.at("weight"), bytes, blob_base, "weight of '" + layer.name + "'"),
                              read_blob(j.at("bias"), bytes, blob_base, "bias of '" + layer.name + "'")};
                graph.weights.emplace(layer.name, std::move(p));
            }
            graph.layers.push_back(std::move(layer));
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::parse_error, std::string("manifest: ") + e.what());
    }
    validate(graph);
    return graph;
}

ModelGraph load_model(const std::filesystem::path& path) { return decode_model(read_file(path)); }

void save_model(const ModelGraph& graph, const std::filesystem::path& path) { write_file(encode_model(graph), path); }

Bytes encode_eval_set(const EvalSet& eval) {
    if (eval.samples.empty()) throw Error(ErrorCode::empty_eval_set, "evaluation set has no samples");
    const auto& shape = eval.samples.front().shape;
    if (shape.size() != 3) throw Error(ErrorCode::shape_mismatch, "samples must be C,H,W");
    validate(eval, Shape3{shape[0], shape[1], shape[2]});

    Bytes out(std::begin(kEvalMagic), std::end(kEvalMagic));
    put<std::uint32_t>(out, kEvalFormatVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(eval.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(eval.num_classes));
    for (auto d : shape) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (const auto& s : eval.samples) put_floats(out, s.data);
    for (auto label : eval.labels) put<std::uint32_t>(out, label);
    return out;
}

EvalSet decode_eval_set(const Bytes& bytes) {
    check_magic(bytes, kEvalMagic);
    Reader r(bytes);
    r.string(4, "magic");
    const auto version = r.get<std::uint32_t>("version");
    if (version != kEvalFormatVersion) {
        throw Error(ErrorCode::unsupported_version, "eval format version " + std::to_string(version));
    }
    const auto n = r.get<std::uint32_t>("sample count");
    EvalSet eval;
    eval.num_classes = r.get<std::uint32_t>("class count");
    Shape3 shape{r.get<std::uint32_t>("sample shape"), r.get<std::uint32_t>("sample shape"),
                 r.get<std::uint32_t>("sample shape")};
    if (n == 0) throw Error(ErrorCode::empty_eval_set, "evaluation set has no samples");
    if (shape.size() == 0) throw Error(ErrorCode::shape_mismatch, "sample shape has a zero dimension");
    if (static_cast<std::uint64_t>(n) * (shape.size() * sizeof(float) + sizeof(std::uint32_t)) > r.remaining()) {
        throw Error(ErrorCode::truncated_blob, "file ends inside the sample data");
    }
    eval.samples.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) eval.samples.emplace_back(shape.as_shape(), r.floats(shape.size(), "sample"));
    eval.labels.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) eval.labels.push_back(r.get<std::uint32_t>("labels"));
    validate(eval, shape);
    return eval;
}

EvalSet load_eval_set(const std::filesystem::path& path) { return decode_eval_set(read_file(path)); }

void save_eval_set(const EvalSet& eval, const std::filesystem::path& path) {
    write_file(encode_eval_set(eval), path);
}

}  // namespace ccnn
