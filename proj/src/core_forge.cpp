#include "ordergap/core_forge.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iterator>
#include <set>

#include <json.hpp>

#include "ordergap/errors.hpp"
#include "ordergap/hash.hpp"
#include "ordergap/json_io.hpp"

namespace ordergap {

using nlohmann::json;

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

ActivationCore capture_core(Backend& backend, std::string_view anchor_prompt, const LayerWindow& window,
                            Polarity polarity, const CaptureOptions& options) {
  const auto layers = window.layers();
  ActivationCore core;
  core.polarity = polarity;
  core.model_id = backend.descriptor().model_id;
  core.construction = options.construction;
  core.capture.anchors = options.anchors;
  core.capture.order_level =
      options.order_level.value_or(polarity == Polarity::Safety ? OrderLevel::O2 : OrderLevel::O5);
  core.capture.polarity_override = options.polarity_override;
  core.capture.timestamp = utc_timestamp();
  core.core_id = options.core_id;
  if (core.core_id.empty()) {
    core.core_id = std::string(to_string(polarity)) + "-" +
                   (options.anchors.empty() ? to_hex(fnv1a64(anchor_prompt)).substr(0, 8) : options.anchors.front());
  }
  check_polarity_convention(core.core_id, core.polarity, core.capture);
  core.vectors = backend.capture_residual(anchor_prompt, layers);
  validate_core(core);
  return core;
}

namespace {

void check_compatible(std::span<const ActivationCore> cores) {
  if (cores.empty()) throw ValidationError("cannot average an empty list of cores");
  const auto& first = cores.front();
  const auto layers = first.layers();
  for (const auto& c : cores) {
    if (c.model_id != first.model_id) {
      throw ValidationError("cores " + first.core_id + " and " + c.core_id + " come from different models");
    }
    if (c.layers() != layers) {
      throw ValidationError("cores " + first.core_id + " and " + c.core_id + " cover different layers");
    }
    if (c.hidden_dim() != first.hidden_dim()) {
      throw ValidationError("cores " + first.core_id + " and " + c.core_id + " have different hidden_dim");
    }
  }
}

ActivationCore combine(std::span<const ActivationCore> cores, Construction construction, std::string core_id) {
  check_compatible(cores);
  const auto& first = cores.front();
  ActivationCore out;
  out.polarity = first.polarity;
  out.model_id = first.model_id;
  out.construction = construction;
  out.capture.order_level = first.capture.order_level;
  out.capture.position = first.capture.position;
  out.capture.timestamp = utc_timestamp();
  std::set<std::string> anchors;
  for (const auto& c : cores) {
    out.capture.parents.push_back(c.core_id);
    anchors.insert(c.capture.anchors.begin(), c.capture.anchors.end());
    if (c.polarity != first.polarity) out.capture.polarity_override = true;
    if (c.capture.polarity_override) out.capture.polarity_override = true;
  }
  out.capture.anchors.assign(anchors.begin(), anchors.end());
  if (core_id.empty()) {
    core_id = std::string(construction == Construction::Blended ? "blend(" : "avg(");
    for (std::size_t i = 0; i < cores.size(); ++i) core_id += (i ? "," : "") + cores[i].core_id;
    core_id += ")";
  }
  out.core_id = std::move(core_id);

  const std::size_t k = cores.size();
  const std::size_t dim = first.hidden_dim();
  std::vector<double> column(k);
  for (const auto& [layer, unused] : first.vectors) {
    Vector mean(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      for (std::size_t c = 0; c < k; ++c) column[c] = cores[c].vectors.at(layer)[i];
      std::sort(column.begin(), column.end());
      double sum = 0.0;
      for (double v : column) sum += v;
      mean[i] = static_cast<float>(sum / static_cast<double>(k));
    }
    out.vectors.emplace(layer, std::move(mean));
  }
  return out;
}

}  // namespace

ActivationCore average_cores(std::span<const ActivationCore> cores, std::string core_id) {
  return combine(cores, Construction::Averaged, std::move(core_id));
}

ActivationCore blend_cores(const ActivationCore& a, const ActivationCore& b, std::string core_id) {
  const ActivationCore pair[] = {a, b};
  return combine(pair, Construction::Blended, std::move(core_id));
}

std::vector<std::uint8_t> core_payload(const ActivationCore& core) {
  std::vector<std::uint8_t> out;
  out.reserve(core.vectors.size() * core.hidden_dim() * 4);
  for (const auto& [layer, v] : core.vectors) {
    for (float f : v) {
      const auto bits = std::bit_cast<std::uint32_t>(f);
      for (int shift = 0; shift < 32; shift += 8) out.push_back(static_cast<std::uint8_t>(bits >> shift));
    }
  }
  return out;
}

std::uint64_t core_checksum(const ActivationCore& core) { return fnv1a64(core_payload(core)); }

namespace {

constexpr std::string_view kChecksumKey = "\"checksum\":\"fnv1a64:";
constexpr std::size_t kChecksumDigits = 16;

// Offset of the checksum digits inside the header, or npos.
std::size_t checksum_offset(std::string_view header) {
  const auto pos = header.find(kChecksumKey);
  if (pos == std::string_view::npos || header.find(kChecksumKey, pos + 1) != std::string_view::npos) {
    return std::string_view::npos;
  }
  const auto start = pos + kChecksumKey.size();
  if (start + kChecksumDigits >= header.size() || header[start + kChecksumDigits] != '"') return std::string_view::npos;
  return start;
}

// File checksum: FNV-1a over every byte of the file with the checksum
// digits read as '0'.
std::uint64_t file_checksum(std::span<const std::uint8_t> bytes, std::size_t digits_at) {
  std::uint64_t h = kFnvOffset;
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    const bool digit = i >= digits_at && i < digits_at + kChecksumDigits;
    h ^= digit ? std::uint8_t{'0'} : bytes[i];
    h *= kFnvPrime;
  }
  return h;
}

}  // namespace

std::vector<std::uint8_t> serialize_core(const ActivationCore& core) {
  validate_core(core);
  const auto payload = core_payload(core);
  const json header{{"format_version", kCoreFormatVersion},
                    {"core_id", core.core_id},
                    {"polarity", std::string(to_string(core.polarity))},
                    {"model_id", core.model_id},
                    {"hidden_dim", core.hidden_dim()},
                    {"layers", core.layers()},
                    {"construction", std::string(to_string(core.construction))},
                    {"provenance", to_json(core.capture)},
                    {"payload_bytes", payload.size()},
                    {"checksum", "fnv1a64:" + std::string(kChecksumDigits, '0')}};
  const std::string text = header.dump() + "\n";
  std::vector<std::uint8_t> out(text.begin(), text.end());
  out.insert(out.end(), payload.begin(), payload.end());
  const std::size_t at = checksum_offset(text);
  if (at == std::string::npos) throw ValidationError("core '" + core.core_id + "' header cannot carry a checksum");
  const std::string digits = to_hex(file_checksum(out, at));
  std::copy(digits.begin(), digits.end(), out.begin() + static_cast<std::ptrdiff_t>(at));
  return out;
}

ActivationCore deserialize_core(std::span<const std::uint8_t> bytes) {
  const auto newline = std::find(bytes.begin(), bytes.end(), std::uint8_t{'\n'});
  if (newline == bytes.end()) throw ChecksumError("core file has no header line (corrupted or not a core file)");
  const std::string header_text(bytes.begin(), newline);

  // The checksum covers the whole file and is verified before anything in
  // it is trusted, so any damaged byte surfaces as a ChecksumError.
  const std::size_t at = checksum_offset(header_text);
  std::uint64_t stored = 0;
  bool readable = at != std::string::npos;
  if (readable) {
    try {
      stored = from_hex(std::string_view(header_text).substr(at, kChecksumDigits));
    } catch (const ValidationError&) {
      readable = false;
    }
  }
  if (!readable || stored != file_checksum(bytes, at)) {
    throw ChecksumError(readable ? "core file checksum mismatch (corrupted file)"
                                 : "core file checksum missing or damaged (corrupted file)");
  }

  json header;
  try {
    header = json::parse(header_text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("core header is not valid JSON: ") + e.what());
  }
  const auto payload = bytes.subspan(static_cast<std::size_t>(newline - bytes.begin()) + 1);
  try {
    const int version = header.at("format_version").get<int>();
    if (version != kCoreFormatVersion) {
      throw VersionError("core format version " + std::to_string(version) + " is not supported (reader is v" +
                         std::to_string(kCoreFormatVersion) + ")");
    }
    const auto dim = header.at("hidden_dim").get<std::size_t>();
    const auto layers = header.at("layers").get<std::vector<int>>();
    if (payload.size() != header.at("payload_bytes").get<std::size_t>() ||
        payload.size() != dim * layers.size() * 4) {
      throw ValidationError("core payload length does not match header");
    }

    ActivationCore core;
    core.core_id = header.at("core_id").get<std::string>();
    core.polarity = parse_polarity(header.at("polarity").get<std::string>());
    core.model_id = header.at("model_id").get<std::string>();
    core.construction = parse_construction(header.at("construction").get<std::string>());
    core.capture = provenance_from_json(header.at("provenance"));
    std::size_t offset = 0;
    for (int layer : layers) {
      Vector v(dim);
      for (std::size_t i = 0; i < dim; ++i, offset += 4) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(payload[offset + b]) << (8 * b);
        v[i] = std::bit_cast<float>(bits);
      }
      core.vectors.emplace(layer, std::move(v));
    }
    validate_core(core);
    return core;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("core header is missing fields: ") + e.what());
  }
}

void save_core(const ActivationCore& core, const std::filesystem::path& path) {
  const auto bytes = serialize_core(core);
  const auto tmp = std::filesystem::path(path).concat(".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write core file " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ValidationError("short write on core file " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

ActivationCore load_core(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open core file " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_core(bytes);
}

}  // namespace ordergap
