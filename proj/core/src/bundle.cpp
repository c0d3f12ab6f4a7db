#include "collab/bundle.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <numeric>
#include <utility>

#include "json.hpp"

namespace collab {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'C', 'A', 'W', 'B'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
}

std::uint64_t get_u64(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

void put_f32(std::vector<std::uint8_t>& out, double x) {
    put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
}

double get_f32(const std::uint8_t* p) {
    return static_cast<double>(std::bit_cast<float>(get_u32(p)));
}

const json& member(const json& j, const char* key, const std::string& path) {
    if (!j.is_object()) throw ParseError(path + ": expected an object");
    auto it = j.find(key);
    if (it == j.end()) throw ParseError(path + "." + key + ": missing");
    return *it;
}

std::size_t as_count(const json& j, const std::string& path) {
    if (!j.is_number_unsigned()) throw ParseError(path + ": expected a non-negative integer");
    return j.get<std::size_t>();
}

std::string as_string(const json& j, const std::string& path) {
    if (!j.is_string()) throw ParseError(path + ": expected a string");
    return j.get<std::string>();
}

const char* kConcatSuffixes[] = {"w_q", "w_k", "w_v", "w_o", "b_q", "b_k"};
const char* kCollabSuffixes[] = {"wq_shared", "wk_shared", "mixing", "content_bias", "w_v", "w_o"};

std::string tensor_name(std::size_t layer, const char* suffix) {
    return "layer." + std::to_string(layer) + "." + suffix;
}

bool has_all(const WeightBundle& b, std::size_t layer, const char* const (&suffixes)[6]) {
    for (const char* s : suffixes)
        if (!b.has(tensor_name(layer, s))) return false;
    return true;
}

[[noreturn]] void rethrow_as_validation(std::size_t layer, const ShapeError& e) {
    throw ValidationError("layer " + std::to_string(layer) + ": " + e.what());
}

} // namespace

std::size_t TensorRecord::element_count() const {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

bool WeightBundle::has(const std::string& name) const {
    for (const auto& r : manifest)
        if (r.name == name) return true;
    return false;
}

const TensorRecord& WeightBundle::find(const std::string& name) const {
    for (const auto& r : manifest)
        if (r.name == name) return r;
    throw ValidationError("bundle: missing tensor '" + name + "'");
}

Matrix WeightBundle::matrix(const std::string& name) const {
    const TensorRecord& r = find(name);
    if (r.shape.size() != 2) {
        throw ValidationError("tensor '" + name + "': expected 2 dimensions, manifest has " +
                              std::to_string(r.shape.size()));
    }
    Matrix m(r.shape[0], r.shape[1]);
    const std::uint8_t* src = blob.data() + r.byte_offset;
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = get_f32(src + 4 * i);
    return m;
}

std::vector<double> WeightBundle::vector(const std::string& name) const {
    const TensorRecord& r = find(name);
    if (r.shape.size() != 1) {
        throw ValidationError("tensor '" + name + "': expected 1 dimension, manifest has " +
                              std::to_string(r.shape.size()));
    }
    std::vector<double> v(r.shape[0]);
    const std::uint8_t* src = blob.data() + r.byte_offset;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = get_f32(src + 4 * i);
    return v;
}

void WeightBundle::add(const std::string& name, std::vector<std::size_t> shape, const double* data,
                       std::size_t count) {
    if (has(name)) throw ValidationError("bundle: duplicate tensor '" + name + "'");
    TensorRecord r;
    r.name = name;
    r.shape = std::move(shape);
    r.byte_offset = blob.size();
    if (r.element_count() != count) {
        throw ShapeError("bundle: tensor '" + name + "' shape does not match data length");
    }
    blob.reserve(blob.size() + 4 * count);
    for (std::size_t i = 0; i < count; ++i) put_f32(blob, data[i]);
    manifest.push_back(std::move(r));
}

void WeightBundle::add_matrix(const std::string& name, const Matrix& m) {
    add(name, {m.rows(), m.cols()}, m.data(), m.size());
}

void WeightBundle::add_vector(const std::string& name, const std::vector<double>& v) {
    add(name, {v.size()}, v.data(), v.size());
}

void WeightBundle::validate() const {
    if (metadata.n_heads < 1 || metadata.d_k_per_head < 1 || metadata.d_in < 1 ||
        metadata.d_out < 1 || metadata.n_layers < 1) {
        throw ValidationError("metadata: all counts must be >= 1");
    }

    std::size_t total = 0;
    for (const auto& r : manifest) {
        if (r.dtype != "f32") {
            throw ValidationError("tensor '" + r.name + "': unsupported dtype '" + r.dtype + "'");
        }
        if (r.shape.empty()) {
            throw ValidationError("tensor '" + r.name + "': empty shape");
        }
        for (std::size_t d : r.shape) {
            if (d < 1) throw ValidationError("tensor '" + r.name + "': zero dimension");
        }
        if (r.byte_offset > blob.size() || r.byte_count() > blob.size() - r.byte_offset) {
            throw ValidationError("tensor '" + r.name + "': needs " + std::to_string(r.byte_count()) +
                                  " bytes at offset " + std::to_string(r.byte_offset) +
                                  ", blob has " + std::to_string(blob.size()));
        }
        total += r.byte_count();
    }

    std::vector<std::size_t> order(manifest.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return manifest[a].byte_offset < manifest[b].byte_offset;
    });
    for (std::size_t i = 0; i + 1 < order.size(); ++i) {
        const TensorRecord& a = manifest[order[i]];
        const TensorRecord& b = manifest[order[i + 1]];
        if (a.name == b.name) throw ValidationError("bundle: duplicate tensor '" + a.name + "'");
        if (a.byte_offset + a.byte_count() > b.byte_offset) {
            throw ValidationError("tensors '" + a.name + "' and '" + b.name + "' overlap");
        }
    }
    if (total != blob.size()) {
        throw ValidationError("blob has " + std::to_string(blob.size()) +
                              " bytes but manifest accounts for " + std::to_string(total));
    }

    // Every layer must carry one complete name set; forms may not be mixed.
    const bool collab_form = has_all(*this, 0, kCollabSuffixes);
    for (std::size_t layer = 0; layer < metadata.n_layers; ++layer) {
        if (!has_all(*this, layer, collab_form ? kCollabSuffixes : kConcatSuffixes)) {
            throw ValidationError("layer " + std::to_string(layer) + ": incomplete " +
                                  (collab_form ? "collab" : "concat") + " tensor set");
        }
    }
}

WeightBundle load_bundle(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failure on '" + path.string() + "'");

    if (bytes.size() < 16) throw ParseError("bundle: file too short for header");
    if (!std::equal(kMagic, kMagic + 4, bytes.begin())) {
        throw ParseError("bundle: bad magic, not a weight bundle");
    }
    const std::uint32_t version = get_u32(bytes.data() + 4);
    if (version != kVersion) {
        throw ParseError("bundle: unsupported version " + std::to_string(version));
    }
    const std::uint64_t manifest_len = get_u64(bytes.data() + 8);
    if (manifest_len > bytes.size() - 16) {
        throw ParseError("bundle: manifest length exceeds file size");
    }

    json doc;
    try {
        doc = json::parse(bytes.begin() + 16, bytes.begin() + 16 + manifest_len);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("manifest: ") + e.what());
    }

    WeightBundle b;
    const json& md = member(doc, "metadata", "manifest");
    b.metadata.n_heads = as_count(member(md, "n_heads", "manifest.metadata"), "manifest.metadata.n_heads");
    b.metadata.d_k_per_head =
        as_count(member(md, "d_k_per_head", "manifest.metadata"), "manifest.metadata.d_k_per_head");
    b.metadata.d_in = as_count(member(md, "d_in", "manifest.metadata"), "manifest.metadata.d_in");
    b.metadata.d_out = as_count(member(md, "d_out", "manifest.metadata"), "manifest.metadata.d_out");
    b.metadata.n_layers =
        as_count(member(md, "n_layers", "manifest.metadata"), "manifest.metadata.n_layers");

    const json& tensors = member(doc, "tensors", "manifest");
    if (!tensors.is_array()) throw ParseError("manifest.tensors: expected an array");
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        const std::string path_i = "manifest.tensors[" + std::to_string(i) + "]";
        const json& tj = tensors[i];
        TensorRecord r;
        r.name = as_string(member(tj, "name", path_i), path_i + ".name");
        const json& shape = member(tj, "shape", path_i);
        if (!shape.is_array()) throw ParseError(path_i + ".shape: expected an array");
        for (std::size_t k = 0; k < shape.size(); ++k) {
            r.shape.push_back(as_count(shape[k], path_i + ".shape[" + std::to_string(k) + "]"));
        }
        r.dtype = as_string(member(tj, "dtype", path_i), path_i + ".dtype");
        r.byte_offset = as_count(member(tj, "byte_offset", path_i), path_i + ".byte_offset");
        b.manifest.push_back(std::move(r));
    }

    b.blob.assign(bytes.begin() + 16 + manifest_len, bytes.end());
    b.validate();
    return b;
}

void save_bundle(const WeightBundle& bundle, const std::filesystem::path& path) {
    bundle.validate();

    json doc;
    doc["metadata"] = {{"n_heads", bundle.metadata.n_heads},
                       {"d_k_per_head", bundle.metadata.d_k_per_head},
                       {"d_in", bundle.metadata.d_in},
                       {"d_out", bundle.metadata.d_out},
                       {"n_layers", bundle.metadata.n_layers}};
    doc["tensors"] = json::array();
    for (const auto& r : bundle.manifest) {
        doc["tensors"].push_back({{"name", r.name},
                                  {"shape", r.shape},
                                  {"dtype", r.dtype},
                                  {"byte_offset", r.byte_offset}});
    }
    const std::string manifest = doc.dump();

    std::vector<std::uint8_t> out;
    out.reserve(16 + manifest.size() + bundle.blob.size());
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u32(out, kVersion);
    put_u64(out, manifest.size());
    out.insert(out.end(), manifest.begin(), manifest.end());
    out.insert(out.end(), bundle.blob.begin(), bundle.blob.end());

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("write failure on '" + path.string() + "'");
}

bool bundle_is_collab(const WeightBundle& bundle) {
    return has_all(bundle, 0, kCollabSuffixes);
}

ConcatMHAParams concat_params_from_bundle(const WeightBundle& bundle, std::size_t layer) {
    if (layer >= bundle.metadata.n_layers) {
        throw ArgumentError("layer " + std::to_string(layer) + " out of range");
    }
    const BundleMetadata& md = bundle.metadata;
    ConcatMHAParams p;
    p.w_q = bundle.matrix(tensor_name(layer, "w_q"));
    p.w_k = bundle.matrix(tensor_name(layer, "w_k"));
    p.w_v = bundle.matrix(tensor_name(layer, "w_v"));
    p.w_o = bundle.matrix(tensor_name(layer, "w_o"));
    p.b_q = bundle.vector(tensor_name(layer, "b_q"));
    p.b_k = bundle.vector(tensor_name(layer, "b_k"));

    if (p.w_v.cols() % md.n_heads != 0) {
        throw ValidationError("layer " + std::to_string(layer) +
                              ": w_v columns not divisible by n_heads");
    }
    try {
        p.dims = AttentionDims::make(md.d_in, md.d_out, md.n_heads, md.d_k_per_head,
                                     p.w_v.cols() / md.n_heads);
        p.validate();
    } catch (const ShapeError& e) {
        rethrow_as_validation(layer, e);
    }
    return p;
}

CollabMHAParams collab_params_from_bundle(const WeightBundle& bundle, std::size_t layer) {
    if (layer >= bundle.metadata.n_layers) {
        throw ArgumentError("layer " + std::to_string(layer) + " out of range");
    }
    const BundleMetadata& md = bundle.metadata;
    CollabMHAParams p;
    p.w_q_shared = bundle.matrix(tensor_name(layer, "wq_shared"));
    p.w_k_shared = bundle.matrix(tensor_name(layer, "wk_shared"));
    p.mixing.m = bundle.matrix(tensor_name(layer, "mixing"));
    p.content_bias = bundle.matrix(tensor_name(layer, "content_bias"));
    p.w_v = bundle.matrix(tensor_name(layer, "w_v"));
    p.w_o = bundle.matrix(tensor_name(layer, "w_o"));
    p.d_k_shared = p.w_q_shared.cols();
    p.mixing.kind = p.mixing.m.rows() >= 1 && p.mixing.is_blocks_of_one(md.d_k_per_head)
                        ? MixingKind::BlocksOfOne
                        : MixingKind::Dense;

    if (p.w_v.cols() % md.n_heads != 0) {
        throw ValidationError("layer " + std::to_string(layer) +
                              ": w_v columns not divisible by n_heads");
    }
    try {
        p.dims = AttentionDims::make(md.d_in, md.d_out, md.n_heads, md.d_k_per_head,
                                     p.w_v.cols() / md.n_heads);
        p.validate();
    } catch (const ShapeError& e) {
        rethrow_as_validation(layer, e);
    }
    return p;
}

void append_concat_layer(WeightBundle& bundle, std::size_t layer, const ConcatMHAParams& params) {
    params.validate();
    bundle.add_matrix(tensor_name(layer, "w_q"), params.w_q);
    bundle.add_matrix(tensor_name(layer, "w_k"), params.w_k);
    bundle.add_matrix(tensor_name(layer, "w_v"), params.w_v);
    bundle.add_matrix(tensor_name(layer, "w_o"), params.w_o);
    bundle.add_vector(tensor_name(layer, "b_q"), params.b_q);
    bundle.add_vector(tensor_name(layer, "b_k"), params.b_k);
}

void append_collab_layer(WeightBundle& bundle, std::size_t layer, const CollabMHAParams& params) {
    params.validate();
    bundle.add_matrix(tensor_name(layer, "wq_shared"), params.w_q_shared);
    bundle.add_matrix(tensor_name(layer, "wk_shared"), params.w_k_shared);
    bundle.add_matrix(tensor_name(layer, "mixing"), params.mixing.m);
    bundle.add_matrix(tensor_name(layer, "content_bias"), params.content_bias);
    bundle.add_matrix(tensor_name(layer, "w_v"), params.w_v);
    bundle.add_matrix(tensor_name(layer, "w_o"), params.w_o);
}

} // namespace collab
