#pragma once

// Checkpoint file:
//   NCBF-CHECKPOINT v1\n
//   header_bytes=<n>\n
//   <n bytes of key=value metadata lines>
//   <f64 little-endian blocks in the order declared by the `blocks` key>
// Blocks: barrier params, rejection params, actor params (each flattened as
// MlpParams::flatten), the training curve (rows x 7), then the embedded run
// configuration as raw bytes. A sidecar `<path>.txt` holds the same
// metadata text.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "ncbf/datagen.hpp"
#include "ncbf/error.hpp"
#include "ncbf/training.hpp"

namespace ncbf {

/// SHA-1 over "blob <len>\0<text>", the object id git would assign.
inline std::string git_blob_hash(const std::string& text) {
    const std::string blob = "blob " + std::to_string(text.size()) + std::string(1, '\0') + text;
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(blob.data(), blob.size(), md, &len, EVP_sha1(), nullptr) != 1)
        throw std::runtime_error("sha1 digest failed");
    std::ostringstream hex;
    for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
    return hex.str();
}

namespace detail {

inline void put_f64_le(std::string& out, double v) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

inline double get_f64_le(const unsigned char* p) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return std::bit_cast<double>(bits);
}

inline std::string fmt(double v) {
    std::string s;
    put_double(s, v);
    return s;
}

inline std::string shape_string(const MlpParams& p) {
    return std::to_string(p.input_dim()) + "x" + std::to_string(p.width()) + "x" + std::to_string(p.width()) + "x" +
           std::to_string(p.output_dim());
}

inline std::string vec_string(const Eigen::VectorXd& v) {
    std::string s;
    for (Index i = 0; i < v.size(); ++i) {
        if (i) s += ' ';
        s += fmt(v(i));
    }
    return s;
}

class HeaderMap {
public:
    HeaderMap(const std::string& text, std::string path) : path_(std::move(path)) {
        std::istringstream in(text);
        std::string line;
        std::size_t n = 2;
        while (std::getline(in, line)) {
            ++n;
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw FormatError(path_, n, "metadata line without '='");
            kv_[line.substr(0, eq)] = line.substr(eq + 1);
        }
    }

    const std::string& str(const std::string& key) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) throw FormatError(path_, 3, "missing metadata key '" + key + "'");
        return it->second;
    }
    bool has(const std::string& key) const { return kv_.count(key) != 0; }
    double num(const std::string& key) const {
        const auto& s = str(key);
        char* end = nullptr;
        const double v = std::strtod(s.c_str(), &end);
        if (end != s.c_str() + s.size()) throw FormatError(path_, 3, "bad number for '" + key + "'");
        return v;
    }
    long long integer(const std::string& key) const {
        const auto& s = str(key);
        char* end = nullptr;
        const long long v = std::strtoll(s.c_str(), &end, 10);
        if (s.empty() || end != s.c_str() + s.size()) throw FormatError(path_, 3, "bad integer for '" + key + "'");
        return v;
    }
    std::vector<double> nums(const std::string& key) const {
        std::istringstream in(str(key));
        std::vector<double> out;
        std::string tok;
        while (in >> tok) {
            char* end = nullptr;
            out.push_back(std::strtod(tok.c_str(), &end));
            if (end != tok.c_str() + tok.size()) throw FormatError(path_, 3, "bad number list for '" + key + "'");
        }
        return out;
    }
    // "5x128x128x1" -> {5, 128, 1}
    std::array<Index, 3> shape(const std::string& key) const {
        std::vector<Index> dims;
        std::istringstream in(str(key));
        std::string tok;
        while (std::getline(in, tok, 'x')) dims.push_back(static_cast<Index>(std::strtol(tok.c_str(), nullptr, 10)));
        if (dims.size() != 4 || dims[1] != dims[2] || dims[0] < 1 || dims[1] < 1 || dims[3] < 1)
            throw FormatError(path_, 3, "bad layer shape for '" + key + "'");
        return {dims[0], dims[1], dims[3]};
    }

private:
    std::string path_;
    std::map<std::string, std::string> kv_;
};

}  // namespace detail

/// Metadata text. Also written verbatim as the sidecar.
inline std::string checkpoint_header(const Checkpoint& ck) {
    using detail::fmt;
    const auto& c = ck.config;
    const auto& d = ck.dynamics;
    const auto& m = ck.models;
    std::string blocks = "cbf";
    if (m.rejection) blocks += ",rejection";
    if (m.actor) blocks += ",actor";
    blocks += ",curve,run_config";

    std::ostringstream h;
    h << "format=ncbf-checkpoint\n"
      << "method=" << to_string(ck.method) << "\n"
      << "dynamics=" << to_string(d.kind) << "\n"
      << "dt=" << fmt(d.dt) << "\n"
      << "wheelbase=" << fmt(d.wheelbase) << "\n"
      << "v_max=" << fmt(d.v_max) << "\n"
      << "omega_max=" << fmt(d.omega_max) << "\n"
      << "u_min=" << detail::vec_string(d.u_min) << "\n"
      << "u_max=" << detail::vec_string(d.u_max) << "\n"
      << "c=" << fmt(c.c) << "\n"
      << "kappa=" << fmt(c.kappa) << "\n"
      << "seed=" << c.seed << "\n"
      << "iterations=" << c.iterations << "\n"
      << "annotation_start=" << c.annotation_start << "\n"
      << "anchor_size=" << c.anchor_size << "\n"
      << "batch_safe=" << c.batch_safe << "\n"
      << "batch_unsafe=" << c.batch_unsafe << "\n"
      << "batch_unlabeled=" << c.batch_unlabeled << "\n"
      << "hidden_width=" << c.hidden_width << "\n"
      << "learning_rate=" << fmt(c.adam.learning_rate) << "\n"
      << "beta1=" << fmt(c.adam.beta1) << "\n"
      << "beta2=" << fmt(c.adam.beta2) << "\n"
      << "adam_epsilon=" << fmt(c.adam.epsilon) << "\n"
      << "regularization_on=" << (c.regularization_on ? 1 : 0) << "\n"
      << "annotation_on=" << (c.annotation_on ? 1 : 0) << "\n"
      << "unsafe_horizon=" << c.unsafe_horizon << "\n"
      << "config_hash=" << git_blob_hash(ck.run_config) << "\n"
      << "scaling_center=" << detail::vec_string(m.cbf.scaling.center) << "\n"
      << "scaling_inv_half_range=" << detail::vec_string(m.cbf.scaling.inv_half_range) << "\n"
      << "activation=" << (m.cbf.params.hidden == Activation::Tanh ? "tanh" : "identity") << "\n"
      << "cbf_shape=" << detail::shape_string(m.cbf.params) << "\n";
    if (m.rejection) h << "rejection_shape=" << detail::shape_string(m.rejection->params) << "\n";
    if (m.actor) h << "actor_shape=" << detail::shape_string(m.actor->params) << "\n";
    h << "curve_rows=" << ck.curve.size() << "\n"
      << "curve_columns=iteration,rejection_loss,actor_loss,cbf_loss,annotated_safe,annotated_unsafe,anchor_mean\n"
      << "run_config_bytes=" << ck.run_config.size() << "\n"
      << "blocks=" << blocks << "\n";
    return h.str();
}

inline std::string serialize_checkpoint(const Checkpoint& ck) {
    const std::string header = checkpoint_header(ck);
    std::string out = "NCBF-CHECKPOINT v1\nheader_bytes=" + std::to_string(header.size()) + "\n" + header;
    auto put_params = [&](const MlpParams& p) {
        for (double v : p.flatten()) detail::put_f64_le(out, v);
    };
    put_params(ck.models.cbf.params);
    if (ck.models.rejection) put_params(ck.models.rejection->params);
    if (ck.models.actor) put_params(ck.models.actor->params);
    for (const auto& r : ck.curve)
        for (double v : {double(r.iteration), r.rejection_loss, r.actor_loss, r.cbf_loss, double(r.annotated_safe),
                         double(r.annotated_unsafe), r.anchor_mean})
            detail::put_f64_le(out, v);
    out += ck.run_config;
    return out;
}

inline Checkpoint parse_checkpoint(const std::string& bytes, const std::string& path = "<memory>") {
    const std::string magic = "NCBF-CHECKPOINT v1\n";
    if (bytes.compare(0, magic.size(), magic) != 0) throw FormatError(path, 1, "not a checkpoint file");
    const auto nl = bytes.find('\n', magic.size());
    const std::string hb = bytes.substr(magic.size(), nl == std::string::npos ? 0 : nl - magic.size());
    if (nl == std::string::npos || hb.rfind("header_bytes=", 0) != 0) throw FormatError(path, 2, "missing header_bytes");
    const std::size_t header_len = std::stoull(hb.substr(13));
    const std::size_t header_start = nl + 1;
    if (header_start + header_len > bytes.size()) throw FormatError(path, 2, "truncated header");
    const detail::HeaderMap h(bytes.substr(header_start, header_len), path);

    Checkpoint ck;
    ck.method = parse_method(h.str("method"));
    auto& d = ck.dynamics;
    d.kind = parse_dynamics_kind(h.str("dynamics"));
    d.dt = h.num("dt");
    d.wheelbase = h.num("wheelbase");
    d.v_max = h.num("v_max");
    d.omega_max = h.num("omega_max");
    const auto umin = h.nums("u_min"), umax = h.nums("u_max");
    if (umin.size() != 2 || umax.size() != 2) throw FormatError(path, 3, "control bounds need two entries");
    d.u_min = {umin[0], umin[1]};
    d.u_max = {umax[0], umax[1]};

    auto& c = ck.config;
    c.c = h.num("c");
    c.kappa = h.num("kappa");
    c.seed = static_cast<std::uint64_t>(std::stoull(h.str("seed")));
    c.iterations = static_cast<int>(h.integer("iterations"));
    c.annotation_start = static_cast<int>(h.integer("annotation_start"));
    c.anchor_size = static_cast<int>(h.integer("anchor_size"));
    c.batch_safe = static_cast<int>(h.integer("batch_safe"));
    c.batch_unsafe = static_cast<int>(h.integer("batch_unsafe"));
    c.batch_unlabeled = static_cast<int>(h.integer("batch_unlabeled"));
    c.hidden_width = static_cast<int>(h.integer("hidden_width"));
    c.adam.learning_rate = h.num("learning_rate");
    c.adam.beta1 = h.num("beta1");
    c.adam.beta2 = h.num("beta2");
    c.adam.epsilon = h.num("adam_epsilon");
    c.regularization_on = h.integer("regularization_on") != 0;
    c.annotation_on = h.integer("annotation_on") != 0;
    c.unsafe_horizon = static_cast<int>(h.integer("unsafe_horizon"));

    InputScaling scaling;
    const auto center = h.nums("scaling_center"), inv = h.nums("scaling_inv_half_range");
    if (center.size() != kStateDim || inv.size() != kStateDim) throw FormatError(path, 3, "bad input scaling");
    for (Index i = 0; i < kStateDim; ++i) {
        scaling.center(i) = center[static_cast<std::size_t>(i)];
        scaling.inv_half_range(i) = inv[static_cast<std::size_t>(i)];
    }
    const Activation act = h.str("activation") == "identity" ? Activation::Identity : Activation::Tanh;

    std::size_t pos = header_start + header_len;
    auto read_f64 = [&]() {
        if (pos + 8 > bytes.size()) throw FormatError(path, 3, "truncated weight data");
        const double v = detail::get_f64_le(reinterpret_cast<const unsigned char*>(bytes.data() + pos));
        pos += 8;
        return v;
    };
    auto read_params = [&](const std::string& key) {
        const auto s = h.shape(key);
        MlpParams p = MlpParams::zeros(s[0], s[1], s[2], act);
        std::vector<double> flat(p.parameter_count());
        for (auto& v : flat) v = read_f64();
        p.assign_flat(flat);
        return p;
    };

    ck.models.cbf = {read_params("cbf_shape"), scaling};
    if (h.has("rejection_shape")) ck.models.rejection = RejectionModel{read_params("rejection_shape"), scaling, c.c};
    if (h.has("actor_shape")) ck.models.actor = ActorModel{read_params("actor_shape"), scaling, d.u_min, d.u_max};
    const auto rows = static_cast<std::size_t>(h.integer("curve_rows"));
    ck.curve.resize(rows);
    for (auto& r : ck.curve) {
        r.iteration = static_cast<int>(read_f64());
        r.rejection_loss = read_f64();
        r.actor_loss = read_f64();
        r.cbf_loss = read_f64();
        r.annotated_safe = static_cast<int>(read_f64());
        r.annotated_unsafe = static_cast<int>(read_f64());
        r.anchor_mean = read_f64();
    }
    const auto cfg_len = static_cast<std::size_t>(h.integer("run_config_bytes"));
    if (pos + cfg_len != bytes.size()) throw FormatError(path, 3, "checkpoint size does not match its header");
    ck.run_config = bytes.substr(pos, cfg_len);
    if (git_blob_hash(ck.run_config) != h.str("config_hash"))
        throw FormatError(path, 3, "embedded run configuration does not match config_hash");
    return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    {
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) throw ConfigError("cannot open '" + path + "' for writing");
        f << serialize_checkpoint(ck);
        if (!f) throw ConfigError("write failed for '" + path + "'");
    }
    std::ofstream side(path + ".txt", std::ios::binary | std::ios::trunc);
    if (!side) throw ConfigError("cannot open '" + path + ".txt' for writing");
    side << checkpoint_header(ck);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open checkpoint '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_checkpoint(ss.str(), path);
}

/// Training curve as CSV.
inline std::string curve_csv(const std::vector<CurveRow>& curve) {
    std::string out = "iteration,rejection_loss,actor_loss,cbf_loss,annotated_safe,annotated_unsafe,anchor_mean\n";
    for (const auto& r : curve) {
        out += std::to_string(r.iteration) + "," + detail::fmt(r.rejection_loss) + "," + detail::fmt(r.actor_loss) +
               "," + detail::fmt(r.cbf_loss) + "," + std::to_string(r.annotated_safe) + "," +
               std::to_string(r.annotated_unsafe) + "," + detail::fmt(r.anchor_mean) + "\n";
    }
    return out;
}

}  // namespace ncbf
