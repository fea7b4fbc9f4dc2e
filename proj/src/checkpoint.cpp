#include <cstring>
#include <fstream>

#include <json.hpp>

#include "msdnn/model.hpp"

namespace msdnn {

namespace {

constexpr char kMagic[8] = {'M', 'S', 'D', 'N', 'N', 'C', 'K', '1'};

nlohmann::json config_json(const NetworkConfig& cfg) {
    nlohmann::json j;
    j["input_size"] = cfg.input_size;
    j["base_channels"] = cfg.base_channels;
    j["rcl_channels"] = cfg.rcl_channels;
    j["fm_channels"] = cfg.fm_channels;
    j["fc_reshape_channels"] = cfg.fc_reshape_channels;
    j["fcm_channels1"] = cfg.fcm_channels1;
    j["fcm_channels2"] = cfg.fcm_channels2;
    j["fc_nodes"] = cfg.fc_nodes();
    j["timesteps"] = cfg.timesteps;
    j["scale_factor"] = cfg.scale_factor;
    j["enabled_scales"] = std::vector<int>(cfg.enabled_scales.begin(), cfg.enabled_scales.end());
    j["deep_supervision_weight"] = cfg.deep_supervision_weight;
    return j;
}

NetworkConfig config_from(const nlohmann::json& j) {
    NetworkConfig cfg;
    cfg.input_size = j.at("input_size").get<int>();
    cfg.base_channels = j.at("base_channels").get<int>();
    cfg.rcl_channels = j.at("rcl_channels").get<int>();
    cfg.fm_channels = j.at("fm_channels").get<int>();
    cfg.fc_reshape_channels = j.at("fc_reshape_channels").get<int>();
    cfg.fcm_channels1 = j.at("fcm_channels1").get<int>();
    cfg.fcm_channels2 = j.at("fcm_channels2").get<int>();
    cfg.timesteps = j.at("timesteps").get<int>();
    cfg.scale_factor = j.at("scale_factor").get<double>();
    auto scales = j.at("enabled_scales").get<std::vector<int>>();
    cfg.enabled_scales = std::set<int>(scales.begin(), scales.end());
    cfg.deep_supervision_weight = j.at("deep_supervision_weight").get<double>();
    cfg.validate();
    if (j.contains("fc_nodes") && j.at("fc_nodes").get<int>() != cfg.fc_nodes())
        throw FormatError("checkpoint fc_nodes " + j.at("fc_nodes").dump() + " inconsistent with config (expected " +
                          std::to_string(cfg.fc_nodes()) + ")");
    return cfg;
}

void put_u64_le(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(b), 8);
}

bool get_u64_le(std::istream& is, std::uint64_t& out) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) return false;
    out = 0;
    for (int i = 0; i < 8; ++i) out |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return true;
}

void put_f64_le(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64_le(os, bits);
}

bool get_f64_le(std::istream& is, double& out) {
    std::uint64_t bits;
    if (!get_u64_le(is, bits)) return false;
    std::memcpy(&out, &bits, 8);
    return true;
}

} // namespace

std::string config_to_json(const NetworkConfig& cfg) { return config_json(cfg).dump(2); }

NetworkConfig config_from_json(const std::string& json_text) {
    return config_from(nlohmann::json::parse(json_text));
}

void save_checkpoint(const MsdnnModel& model, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");

    nlohmann::json header;
    header["config"] = config_json(model.config());
    nlohmann::json plist = nlohmann::json::array();
    for (const ParamEntry& e : model.entries())
        plist.push_back({{"path", e.path}, {"shape", e.value.shape()}});
    header["params"] = plist;
    const std::string htext = header.dump();

    os.write(kMagic, 8);
    put_u64_le(os, htext.size());
    os.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    for (const ParamEntry& e : model.entries())
        for (std::int64_t i = 0; i < e.value.size(); ++i) put_f64_le(os, static_cast<double>(e.value[i]));
    if (!os) throw IoError("write failed for " + path);
}

MsdnnModel load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);

    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0) throw FormatError("bad checkpoint magic in " + path);

    std::uint64_t hlen = 0;
    if (!get_u64_le(is, hlen)) throw FormatError("checkpoint truncated in length prefix: " + path);
    std::string htext(hlen, '\0');
    is.read(htext.data(), static_cast<std::streamsize>(hlen));
    if (!is) throw FormatError("checkpoint truncated in header: " + path);

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(htext);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("checkpoint header is not valid JSON: " + std::string(e.what()));
    }

    MsdnnModel model(config_from(header.at("config")));
    const auto& plist = header.at("params");
    if (plist.size() != model.param_count())
        throw FormatError("checkpoint lists " + std::to_string(plist.size()) + " parameters, model has " +
                          std::to_string(model.param_count()));
    std::size_t idx = 0;
    for (ParamEntry& e : model.entries()) {
        const auto& item = plist.at(idx++);
        const std::string hpath = item.at("path").get<std::string>();
        const Shape hshape = item.at("shape").get<Shape>();
        if (hpath != e.path)
            throw FormatError("checkpoint parameter order mismatch: expected " + e.path + ", found " + hpath);
        if (hshape != e.value.shape())
            throw FormatError("checkpoint shape mismatch at " + e.path + ": file " + shape_str(hshape) +
                              " vs config-derived " + shape_str(e.value.shape()));
        for (std::int64_t i = 0; i < e.value.size(); ++i) {
            double v;
            if (!get_f64_le(is, v)) throw FormatError("checkpoint truncated while reading " + e.path);
            e.value[i] = static_cast<real>(v);
        }
    }
    // trailing garbage is tolerated; nothing reads past the declared params
    return model;
}

} // namespace msdnn
