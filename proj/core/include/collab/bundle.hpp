#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "collab/attention.hpp"

namespace collab {

/// One tensor entry in the bundle manifest. Offsets are relative to the
/// start of the binary blob; payload is little-endian IEEE-754 binary32,
/// row-major (k-fastest for higher-rank shapes).
struct TensorRecord {
    std::string name;
    std::vector<std::size_t> shape;
    std::string dtype = "f32";
    std::size_t byte_offset = 0;

    std::size_t element_count() const;
    std::size_t byte_count() const { return element_count() * 4; }
};

struct BundleMetadata {
    std::size_t n_heads = 0;
    std::size_t d_k_per_head = 0;
    std::size_t d_in = 0;
    std::size_t d_out = 0;
    std::size_t n_layers = 0;
};

/// Container for attention-layer weights: a manifest of named f32 tensors
/// plus one packed binary blob. Tensors are stored back to back with no
/// gaps; the manifest must account for every blob byte exactly once.
///
/// Required names per layer L:
///   concat form: layer.L.w_q  .w_k  .w_v  .w_o  .b_q  .b_k
///   collab form: layer.L.wq_shared  .wk_shared  .mixing  .content_bias  .w_v  .w_o
struct WeightBundle {
    BundleMetadata metadata;
    std::vector<TensorRecord> manifest;
    std::vector<std::uint8_t> blob;

    bool has(const std::string& name) const;
    const TensorRecord& find(const std::string& name) const;  // ValidationError if absent

    /// Decode a 2-D tensor, widening f32 -> f64.
    Matrix matrix(const std::string& name) const;
    /// Decode a 1-D tensor.
    std::vector<double> vector(const std::string& name) const;

    /// Append a tensor at the end of the blob, narrowing f64 -> f32.
    void add(const std::string& name, std::vector<std::size_t> shape, const double* data,
             std::size_t count);
    void add_matrix(const std::string& name, const Matrix& m);
    void add_vector(const std::string& name, const std::vector<double>& v);

    /// Manifest/blob consistency: in-range, non-overlapping, fully packed.
    void validate() const;
};

WeightBundle load_bundle(const std::filesystem::path& path);
void save_bundle(const WeightBundle& bundle, const std::filesystem::path& path);

/// True if layer 0 carries the collaborative tensor names.
bool bundle_is_collab(const WeightBundle& bundle);

ConcatMHAParams concat_params_from_bundle(const WeightBundle& bundle, std::size_t layer);
CollabMHAParams collab_params_from_bundle(const WeightBundle& bundle, std::size_t layer);
void append_concat_layer(WeightBundle& bundle, std::size_t layer, const ConcatMHAParams& params);
void append_collab_layer(WeightBundle& bundle, std::size_t layer, const CollabMHAParams& params);

} // namespace collab
