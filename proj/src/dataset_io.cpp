#include "kflab/dataset_io.hpp"

#include <fstream>

#include "kflab/digest.hpp"
#include "kflab/errors.hpp"

namespace kflab::expert {

namespace {
constexpr int kFormatVersion = 1;

nlohmann::json parse_line(const std::string& line, size_t lineno) {
  try {
    return nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("dataset line " + std::to_string(lineno) + ": " + e.what());
  }
}
}  // namespace

void write_dataset(const DemoDataset& ds, const std::string& path) {
  size_t n_records = 0;
  for (const auto& t : ds.trajs) n_records += 1 + t.ticks.size();

  nlohmann::json mix = nlohmann::json::array();
  for (const auto& m : ds.style_mix) {
    nlohmann::json s = m.style.to_json();
    s["weight"] = m.weight;
    mix.push_back(s);
  }
  nlohmann::json header{{"format_version", kFormatVersion},
                        {"kind", "kflab_demo_dataset"},
                        {"spec", ds.spec.to_json()},
                        {"spec_digest", ds.spec_digest},
                        {"seed", ds.seed},
                        {"style_mix", mix},
                        {"discarded", ds.discarded},
                        {"n_trajectories", ds.trajs.size()},
                        {"n_records", n_records},
                        {"content_digest", ds.content_digest()}};

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("write_dataset: cannot open " + path);
  out << header.dump() << "\n";
  for (const auto& t : ds.trajs) {
    nlohmann::json tj{{"traj",
                       {{"seed", t.seed},
                        {"style_id", t.style_id},
                        {"score", t.score},
                        {"n_ticks", t.ticks.size()}}}};
    out << tj.dump() << "\n";
    for (const auto& tick : t.ticks) out << trajectory_record_line(tick) << "\n";
  }
  if (!out) throw Error("write_dataset: write failed for " + path);
}

DemoDataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("read_dataset: cannot open " + path);

  std::string line;
  size_t lineno = 0;
  if (!std::getline(in, line)) throw IntegrityError("read_dataset: empty file " + path);
  ++lineno;
  nlohmann::json header = parse_line(line, lineno);
  const int version = header.at("format_version").get<int>();
  if (version != kFormatVersion)
    throw UnsupportedVersionError("read_dataset: unsupported format_version " +
                                  std::to_string(version));

  DemoDataset ds;
  ds.format_version = version;
  ds.spec = env::EnvSpec::from_json(header.at("spec"));
  ds.spec_digest = header.at("spec_digest").get<std::string>();
  ds.seed = header.at("seed").get<uint64_t>();
  ds.discarded = header.value("discarded", 0);
  for (const auto& s : header.at("style_mix")) {
    StyleWeight w;
    w.style = OperatorStyle::from_json(s);
    w.weight = s.at("weight").get<double>();
    ds.style_mix.push_back(w);
  }
  const size_t n_trajs = header.at("n_trajectories").get<size_t>();
  const size_t n_records = header.at("n_records").get<size_t>();

  size_t records_read = 0;
  for (size_t ti = 0; ti < n_trajs; ++ti) {
    if (!std::getline(in, line))
      throw IntegrityError("read_dataset: truncated at trajectory " + std::to_string(ti));
    ++lineno;
    ++records_read;
    nlohmann::json tj = parse_line(line, lineno);
    if (!tj.contains("traj"))
      throw ParseError("dataset line " + std::to_string(lineno) + ": expected trajectory header");
    const auto& meta = tj.at("traj");

    Trajectory t;
    t.spec_digest = ds.spec_digest;
    t.seed = meta.at("seed").get<uint64_t>();
    t.style_id = meta.at("style_id").get<std::string>();
    t.score = meta.at("score").get<double>();
    const size_t n_ticks = meta.at("n_ticks").get<size_t>();

    for (size_t k = 0; k < n_ticks; ++k) {
      if (!std::getline(in, line))
        throw IntegrityError("read_dataset: truncated inside trajectory " + std::to_string(ti));
      ++lineno;
      ++records_read;
      nlohmann::json r = parse_line(line, lineno);
      TickRecord rec;
      try {
        rec.tick = r.at("t").get<int>();
        rec.obs = r.at("o").get<std::vector<double>>();
        rec.action = r.at("a").get<std::vector<double>>();
        const auto& l = r.at("l");
        rec.latent.digits_entered = l.at("d").get<std::vector<int>>();
        rec.latent.target_password = l.at("tp").get<std::vector<int>>();
        rec.latent.lemons_inserted = l.at("li").get<int>();
        rec.latent.button_pressed = l.at("bp").get<int>() != 0;
        for (const auto& p : l.at("lp"))
          rec.latent.lemon_positions.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
        for (const auto& ev : r.at("e"))
          rec.events.push_back({ev.at(1).get<int>(),
                                env::event_kind_from_name(ev.at(0).get<std::string>()),
                                ev.at(2).get<int>()});
      } catch (const nlohmann::json::exception& e) {
        throw ParseError("dataset line " + std::to_string(lineno) + ": " + e.what());
      }
      t.ticks.push_back(std::move(rec));
    }
    ds.trajs.push_back(std::move(t));
  }

  if (records_read != n_records)
    throw IntegrityError("read_dataset: record count mismatch (header says " +
                         std::to_string(n_records) + ", file has " +
                         std::to_string(records_read) + ")");
  if (std::getline(in, line) && !line.empty())
    throw IntegrityError("read_dataset: trailing content after the declared records");

  const std::string expect = header.at("content_digest").get<std::string>();
  const std::string got = ds.content_digest();
  if (expect != got)
    throw IntegrityError("read_dataset: content digest mismatch (" + expect + " vs " + got + ")");
  return ds;
}

}  // namespace kflab::expert
