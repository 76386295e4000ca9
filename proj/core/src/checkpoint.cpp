#include "sleepnet/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace sleepnet::train {

using nlohmann::json;

namespace {
constexpr char kMagic[8] = {'S', 'L', 'P', 'N', 'E', 'T', '0', '1'};
}

void Checkpoint::apply_to(const nn::ParamList<float>& params) const {
  if (params.size() != entries.size()) {
    throw Error("checkpoint: model exposes " + std::to_string(params.size()) +
                " parameters, checkpoint holds " + std::to_string(entries.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = entries[i];
    const auto& p = params[i];
    if (e.name != p.name) {
      throw Error("checkpoint: parameter order mismatch at " + std::to_string(i) + ": model '" +
                  p.name + "' vs checkpoint '" + e.name + "'");
    }
    if (e.shape != p.tensor.shape()) {
      throw Error("checkpoint: shape mismatch for " + e.name + ": model " +
                  shape_str(p.tensor.shape()) + " vs checkpoint " + shape_str(e.shape));
    }
    auto& dst = const_cast<Tensor<float>&>(p.tensor).mutable_values();
    std::copy(blob.begin() + static_cast<std::ptrdiff_t>(e.offset),
              blob.begin() + static_cast<std::ptrdiff_t>(e.offset + p.tensor.size()), dst.begin());
  }
}

void save_checkpoint(const std::filesystem::path& path, const std::string& topology_json,
                     const nn::ParamList<float>& params, const OptimizerState* optimizer,
                     int epoch, double best_metric) {
  json header;
  header["format_version"] = 1;
  header["topology"] = topology_json;
  header["topology_digest"] = digest_hex(fnv1a64(topology_json));
  header["epoch"] = epoch;
  header["best_metric"] = best_metric;

  std::vector<float> blob;
  json entries = json::array();
  for (const auto& p : params) {
    json e;
    e["name"] = p.name;
    e["shape"] = p.tensor.shape();
    e["trainable"] = p.trainable;
    e["offset"] = blob.size();
    e["count"] = p.tensor.size();
    entries.push_back(std::move(e));
    blob.insert(blob.end(), p.tensor.values().begin(), p.tensor.values().end());
  }
  header["params"] = std::move(entries);

  if (optimizer) {
    json opt;
    opt["kind"] = optimizer->kind;
    opt["lr"] = optimizer->lr;
    opt["step"] = optimizer->step;
    json slots = json::array();
    for (const auto& [slot_name, per_param] : optimizer->slots) {
      json slot;
      slot["name"] = slot_name;
      json offs = json::array();
      for (const auto& values : per_param) {
        json o;
        o["offset"] = blob.size();
        o["count"] = values.size();
        offs.push_back(std::move(o));
        blob.insert(blob.end(), values.begin(), values.end());
      }
      slot["params"] = std::move(offs);
      slots.push_back(std::move(slot));
    }
    opt["slots"] = std::move(slots);
    header["optimizer"] = std::move(opt);
  } else {
    header["optimizer"] = nullptr;
  }

  const std::string header_str = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("checkpoint: cannot open for writing: " + path.string());
  out.write(kMagic, 8);
  const auto hlen = static_cast<std::uint32_t>(header_str.size());
  char lenbuf[4] = {static_cast<char>(hlen & 0xff), static_cast<char>((hlen >> 8) & 0xff),
                    static_cast<char>((hlen >> 16) & 0xff), static_cast<char>((hlen >> 24) & 0xff)};
  out.write(lenbuf, 4);
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  out.write(reinterpret_cast<const char*>(blob.data()),
            static_cast<std::streamsize>(blob.size() * sizeof(float)));
  if (!out) throw IoError("checkpoint: short write: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open: " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) {
    throw IoError("checkpoint: bad magic in " + path.string());
  }
  char lenbuf[4];
  in.read(lenbuf, 4);
  const std::uint32_t hlen = static_cast<std::uint8_t>(lenbuf[0]) |
                             (static_cast<std::uint8_t>(lenbuf[1]) << 8) |
                             (static_cast<std::uint8_t>(lenbuf[2]) << 16) |
                             (static_cast<std::uint8_t>(lenbuf[3]) << 24);
  std::string header_str(hlen, '\0');
  in.read(header_str.data(), hlen);
  if (!in) throw IoError("checkpoint: truncated header in " + path.string());

  json header;
  try {
    header = json::parse(header_str);
  } catch (const json::exception& e) {
    throw IoError("checkpoint: header parse failure: " + std::string(e.what()));
  }

  Checkpoint ckpt;
  ckpt.format_version = header.at("format_version").get<int>();
  ckpt.topology_json = header.at("topology").get<std::string>();
  ckpt.topology_digest = header.at("topology_digest").get<std::string>();
  ckpt.epoch = header.at("epoch").get<int>();
  ckpt.best_metric = header.at("best_metric").get<double>();
  if (ckpt.topology_digest != digest_hex(fnv1a64(ckpt.topology_json))) {
    throw IoError("checkpoint: topology digest mismatch in " + path.string());
  }

  std::int64_t total = 0;
  for (const auto& e : header.at("params")) {
    Checkpoint::Entry entry;
    entry.name = e.at("name").get<std::string>();
    entry.shape = e.at("shape").get<Shape>();
    entry.trainable = e.at("trainable").get<bool>();
    entry.offset = e.at("offset").get<std::int64_t>();
    total = std::max(total, entry.offset + e.at("count").get<std::int64_t>());
    if (shape_numel(entry.shape) != e.at("count").get<std::int64_t>()) {
      throw IoError("checkpoint: entry " + entry.name + " count does not match its shape");
    }
    ckpt.entries.push_back(std::move(entry));
  }

  if (!header.at("optimizer").is_null()) {
    OptimizerState opt;
    const auto& o = header.at("optimizer");
    opt.kind = o.at("kind").get<std::string>();
    opt.lr = o.at("lr").get<double>();
    opt.step = o.at("step").get<std::int64_t>();
    for (const auto& slot : o.at("slots")) {
      std::vector<std::vector<float>> per_param;
      for (const auto& entry : slot.at("params")) {
        per_param.emplace_back(entry.at("count").get<std::size_t>());
        total = std::max(total, entry.at("offset").get<std::int64_t>() +
                                    entry.at("count").get<std::int64_t>());
      }
      opt.slots.emplace_back(slot.at("name").get<std::string>(), std::move(per_param));
    }
    ckpt.optimizer = std::move(opt);
  }

  ckpt.blob.resize(static_cast<std::size_t>(total));
  in.read(reinterpret_cast<char*>(ckpt.blob.data()),
          static_cast<std::streamsize>(ckpt.blob.size() * sizeof(float)));
  if (!in) throw IoError("checkpoint: truncated blob in " + path.string());

  // Fill optimizer slot values now that the blob is loaded.
  if (ckpt.optimizer) {
    const auto& o = header.at("optimizer");
    std::size_t si = 0;
    for (const auto& slot : o.at("slots")) {
      std::size_t pi = 0;
      for (const auto& entry : slot.at("params")) {
        const auto off = entry.at("offset").get<std::int64_t>();
        auto& dst = ckpt.optimizer->slots[si].second[pi];
        std::copy(ckpt.blob.begin() + static_cast<std::ptrdiff_t>(off),
                  ckpt.blob.begin() + static_cast<std::ptrdiff_t>(off) +
                      static_cast<std::ptrdiff_t>(dst.size()),
                  dst.begin());
        ++pi;
      }
      ++si;
    }
  }
  return ckpt;
}

std::string params_digest(const nn::ParamList<float>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : params) {
    const auto& v = p.tensor.values();
    const auto* bytes = reinterpret_cast<const unsigned char*>(v.data());
    for (std::size_t i = 0; i < v.size() * sizeof(float); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  }
  return digest_hex(h);
}

}  // namespace sleepnet::train
