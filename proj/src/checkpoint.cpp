#include "chroma/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "chroma/random.hpp"

namespace chroma {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'C', 'H', 'R', 'M', 'C', 'K', 'P', 'T'};

std::vector<std::pair<std::string, torch::Tensor>> named_state(const torch::nn::Module& module) {
    std::vector<std::pair<std::string, torch::Tensor>> out;
    for (const auto& item : module.named_parameters(true)) out.emplace_back(item.key(), item.value());
    for (const auto& item : module.named_buffers(true)) out.emplace_back("buffer:" + item.key(), item.value());
    return out;
}

std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << v;
    return os.str();
}

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

json read_header(std::istream& in, const fs::path& file) {
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0) throw std::runtime_error("checkpoint: bad magic in " + file.string());
    const auto version = read_pod<std::uint32_t>(in);
    if (version != kCheckpointVersion) {
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version) + " in " + file.string());
    }
    const auto size = read_pod<std::uint64_t>(in);
    std::string text(size, '\0');
    in.read(text.data(), static_cast<std::streamsize>(size));
    if (!in) throw std::runtime_error("checkpoint: truncated header in " + file.string());
    return json::parse(text);
}

}  // namespace

std::string architecture_hash(const torch::nn::Module& module, const std::string& kind) {
    std::uint64_t h = fnv1a64(kind);
    for (const auto& [name, t] : named_state(module)) {
        h = fnv1a64(name, h);
        for (auto d : t.sizes()) h = fnv1a64(std::to_string(d) + ",", h);
        h = fnv1a64(";", h);
    }
    return hex64(h);
}

std::uint64_t parameters_checksum(const std::vector<torch::Tensor>& params) {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& p : params) {
        const torch::Tensor c = p.detach().to(torch::kCPU).contiguous();
        const auto* bytes = static_cast<const char*>(c.data_ptr());
        h = fnv1a64(std::string_view(bytes, c.numel() * c.element_size()), h);
    }
    return h;
}

std::uint64_t module_checksum(const torch::nn::Module& module) {
    std::vector<torch::Tensor> all;
    for (auto& [name, t] : named_state(module)) all.push_back(t);
    return parameters_checksum(all);
}

void save_checkpoint(const fs::path& file, const torch::nn::Module& module, const std::string& kind,
                     const json& metadata) {
    json header;
    header["kind"] = kind;
    header["arch_hash"] = architecture_hash(module, kind);
    header["metadata"] = metadata;
    json tensors = json::array();
    std::uint64_t offset = 0;
    const auto state = named_state(module);
    for (const auto& [name, t] : state) {
        tensors.push_back({{"name", name}, {"shape", t.sizes().vec()}, {"offset", offset}});
        offset += static_cast<std::uint64_t>(t.numel()) * sizeof(float);
    }
    header["tensors"] = tensors;
    const std::string text = header.dump();

    if (file.has_parent_path()) fs::create_directories(file.parent_path());
    const fs::path tmp = file.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("save_checkpoint: cannot write " + tmp.string());
        out.write(kMagic, 8);
        write_pod(out, kCheckpointVersion);
        write_pod(out, static_cast<std::uint64_t>(text.size()));
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const auto& [name, t] : state) {
            const torch::Tensor c = t.detach().to(torch::kCPU, torch::kFloat32).contiguous();
            out.write(reinterpret_cast<const char*>(c.data_ptr<float>()),
                      static_cast<std::streamsize>(c.numel() * sizeof(float)));
        }
        if (!out) throw std::runtime_error("save_checkpoint: write failed for " + tmp.string());
    }
    fs::rename(tmp, file);
}

json read_checkpoint_header(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + file.string());
    return read_header(in, file);
}

json load_checkpoint(const fs::path& file, torch::nn::Module& module, const std::string& kind) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + file.string());
    const json header = read_header(in, file);
    if (header.at("kind") != kind) {
        throw std::runtime_error("checkpoint: " + file.string() + " holds '" + header.at("kind").get<std::string>() +
                                 "', expected '" + kind + "'");
    }
    const std::string expected = architecture_hash(module, kind);
    if (header.at("arch_hash") != expected) {
        throw std::runtime_error("checkpoint: architecture hash mismatch for " + file.string() + " (stored " +
                                 header.at("arch_hash").get<std::string>() + ", model " + expected + ")");
    }
    const auto data_start = in.tellg();
    auto state = named_state(module);
    const auto& entries = header.at("tensors");
    if (entries.size() != state.size()) throw std::runtime_error("checkpoint: tensor count mismatch");
    torch::NoGradGuard no_grad;
    for (std::size_t i = 0; i < state.size(); ++i) {
        auto& [name, t] = state[i];
        if (entries[i].at("name") != name) throw std::runtime_error("checkpoint: tensor order mismatch at " + name);
        in.seekg(data_start + static_cast<std::streamoff>(entries[i].at("offset").get<std::uint64_t>()));
        std::vector<float> buf(static_cast<std::size_t>(t.numel()));
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
        if (!in) throw std::runtime_error("checkpoint: truncated data for " + name);
        t.copy_(torch::from_blob(buf.data(), t.sizes(), torch::kFloat32).to(t.dtype()));
    }
    return header.at("metadata");
}

}  // namespace chroma
