#include "eppo/nn/checkpoint.hpp"

#include <fstream>
#include <sstream>

namespace eppo::nn {

namespace {

constexpr char kMagic[8] = {'E', 'P', 'P', 'O', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get_pod(std::istream& is) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
        throw DataError("checkpoint truncated");
    }
    return v;
}

std::string get_bytes(std::istream& is, std::uint64_t n) {
    if (n > (1ULL << 34)) {
        throw DataError("checkpoint field length implausible");
    }
    std::string s(n, '\0');
    if (n > 0 && !is.read(s.data(), static_cast<std::streamsize>(n))) {
        throw DataError("checkpoint truncated");
    }
    return s;
}

}  // namespace

const Mat& Checkpoint::get(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) {
            return t.value;
        }
    }
    throw DataError("checkpoint has no tensor " + name);
}

bool Checkpoint::has(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) {
            return true;
        }
    }
    return false;
}

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw DataError("cannot open " + path + " for writing");
    }
    os.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(os, kCheckpointVersion);
    const std::string header = ckpt.header.dump();
    put<std::uint64_t>(os, header.size());
    os.write(header.data(), static_cast<std::streamsize>(header.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& t : ckpt.tensors) {
        put<std::uint32_t>(os, static_cast<std::uint32_t>(t.name.size()));
        os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        put<std::uint32_t>(os, static_cast<std::uint32_t>(t.value.rows()));
        put<std::uint32_t>(os, static_cast<std::uint32_t>(t.value.cols()));
        os.write(reinterpret_cast<const char*>(t.value.data()),
                 static_cast<std::streamsize>(t.value.size() * static_cast<Eigen::Index>(sizeof(double))));
    }
    put<std::uint64_t>(os, ckpt.rng_state.size());
    os.write(ckpt.rng_state.data(), static_cast<std::streamsize>(ckpt.rng_state.size()));
    if (!os) {
        throw DataError("failed writing " + path);
    }
}

Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw DataError("cannot open checkpoint " + path);
    }
    char magic[8];
    if (!is.read(magic, sizeof(magic)) || std::string(magic, 8) != std::string(kMagic, 8)) {
        throw DataError(path + " is not a checkpoint");
    }
    const auto version = get_pod<std::uint32_t>(is);
    if (version != kCheckpointVersion) {
        throw DataError("checkpoint version " + std::to_string(version) + " unsupported");
    }
    Checkpoint ckpt;
    try {
        ckpt.header = json::parse(get_bytes(is, get_pod<std::uint64_t>(is)));
    } catch (const json::exception& e) {
        throw DataError(std::string("checkpoint header: ") + e.what());
    }
    const auto n = get_pod<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < n; ++i) {
        NamedTensor t;
        t.name = get_bytes(is, get_pod<std::uint32_t>(is));
        const auto rows = get_pod<std::uint32_t>(is);
        const auto cols = get_pod<std::uint32_t>(is);
        std::string raw = get_bytes(is, static_cast<std::uint64_t>(rows) * cols * sizeof(double));
        t.value.resize(rows, cols);
        std::copy(raw.begin(), raw.end(), reinterpret_cast<char*>(t.value.data()));
        ckpt.tensors.push_back(std::move(t));
    }
    ckpt.rng_state = get_bytes(is, get_pod<std::uint64_t>(is));
    return ckpt;
}

void export_model(const SequenceModel& m, const std::string& prefix, Checkpoint& ckpt) {
    for (const auto& p : m.parameters()) {
        ckpt.tensors.push_back({prefix + p.name, p.var->value});
    }
}

void import_model(SequenceModel& m, const std::string& prefix, const Checkpoint& ckpt) {
    for (auto& p : m.parameters()) {
        const Mat& src = ckpt.get(prefix + p.name);
        if (src.rows() != p.var->value.rows() || src.cols() != p.var->value.cols()) {
            throw DataError("tensor " + prefix + p.name + " has the wrong shape");
        }
        p.var->value = src;
    }
}

void save_model(const std::string& path, const SequenceModel& m, const json& extra) {
    Checkpoint ckpt;
    ckpt.header = {{"model", m.spec().to_json()}, {"extra", extra}};
    export_model(m, "", ckpt);
    write_checkpoint(path, ckpt);
}

SequenceModel load_model(const std::string& path) {
    Checkpoint ckpt = read_checkpoint(path);
    if (!ckpt.header.contains("model")) {
        throw DataError(path + ": header lacks a model spec");
    }
    SequenceModel m(ModelSpec::from_json(ckpt.header["model"]), 0);
    import_model(m, "", ckpt);
    return m;
}

std::string serialize_rng(const Rng& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

Rng deserialize_rng(const std::string& state) {
    Rng rng;
    std::istringstream is(state);
    is >> rng;
    if (!is) {
        throw DataError("malformed RNG state");
    }
    return rng;
}

}  // namespace eppo::nn
