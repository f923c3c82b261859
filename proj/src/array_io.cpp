#include "lvo/array_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <regex>
#include <sstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little, "array_io assumes a little-endian host");

namespace lvo {

namespace {

constexpr char kWeightsMagic[8] = {'L', 'V', 'O', 'W', '0', '0', '0', '1'};

template <class T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("unexpected end of file");
    return v;
}

std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    return os;
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read " + path.string());
    return is;
}

} // namespace

void save_tensors(const std::filesystem::path& path, const NamedTensors& tensors) {
    auto os = open_out(path);
    os.write(kWeightsMagic, sizeof kWeightsMagic);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
        for (int d : t.shape()) put<std::int32_t>(os, d);
        os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!os) throw std::runtime_error("failed writing " + path.string());
}

NamedTensors load_tensors(const std::filesystem::path& path) {
    auto is = open_in(path);
    char magic[8];
    is.read(magic, sizeof magic);
    if (!is || std::memcmp(magic, kWeightsMagic, sizeof magic) != 0)
        throw std::runtime_error(path.string() + " is not an LVO weight file");
    const auto count = get<std::uint32_t>(is);
    NamedTensors out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name(get<std::uint32_t>(is), '\0');
        is.read(name.data(), static_cast<std::streamsize>(name.size()));
        std::vector<int> shape(get<std::uint32_t>(is));
        for (int& d : shape) d = get<std::int32_t>(is);
        Tensor t(shape);
        is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
        if (!is) throw std::runtime_error("truncated weight file " + path.string());
        out.emplace_back(std::move(name), std::move(t));
    }
    return out;
}

void save_npy(const std::filesystem::path& path, const Tensor& t) {
    std::ostringstream hdr;
    hdr << "{'descr': '<f8', 'fortran_order': False, 'shape': (";
    for (std::size_t i = 0; i < t.rank(); ++i) hdr << t.dim(i) << (t.rank() == 1 || i + 1 < t.rank() ? ", " : "");
    hdr << "), }";
    std::string header = hdr.str();
    // magic(6) + version(2) + len(2) + header + '\n' padded to 64 bytes
    const std::size_t total = 10 + header.size() + 1;
    header.append((64 - total % 64) % 64, ' ');
    header.push_back('\n');

    auto os = open_out(path);
    os.write("\x93NUMPY", 6);
    put<std::uint8_t>(os, 1);
    put<std::uint8_t>(os, 0);
    put<std::uint16_t>(os, static_cast<std::uint16_t>(header.size()));
    os.write(header.data(), static_cast<std::streamsize>(header.size()));
    os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!os) throw std::runtime_error("failed writing " + path.string());
}

Tensor load_npy(const std::filesystem::path& path) {
    auto is = open_in(path);
    char magic[6];
    is.read(magic, 6);
    if (!is || std::memcmp(magic, "\x93NUMPY", 6) != 0) throw std::runtime_error(path.string() + " is not a .npy file");
    const auto major = get<std::uint8_t>(is);
    get<std::uint8_t>(is);
    std::size_t len = major == 1 ? get<std::uint16_t>(is) : get<std::uint32_t>(is);
    std::string header(len, '\0');
    is.read(header.data(), static_cast<std::streamsize>(len));
    if (header.find("'<f8'") == std::string::npos || header.find("'fortran_order': False") == std::string::npos)
        throw std::runtime_error(path.string() + ": only little-endian float64 C-order arrays are supported");
    std::smatch m;
    if (!std::regex_search(header, m, std::regex(R"('shape':\s*\(([^)]*)\))")))
        throw std::runtime_error(path.string() + ": missing shape");
    std::vector<int> shape;
    std::stringstream dims(m[1].str());
    std::string item;
    while (std::getline(dims, item, ',')) {
        if (item.find_first_not_of(" ") == std::string::npos) continue;
        shape.push_back(std::stoi(item));
    }
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!is) throw std::runtime_error("truncated .npy file " + path.string());
    return t;
}

} // namespace lvo
