#pragma once

// HTTP rating-collection service.
//
// Every session owns one append-only store file, <data_dir>/sessions/<id>.jsonl.
// Each line is one entry:
//
//   {"seq":1,"ts":"...","type":"session_created","session":{session_id, seed,
//        created_at, roster:[participant...], item_order:[point_id...]}}
//   {"seq":2,"ts":"...","type":"ratings","records":[rating x4]}
//   {"seq":3,"ts":"...","type":"stage","stage":"collective"}
//   {"seq":4,"ts":"...","type":"ranking","record":{ranking}}
//
// seq is strictly increasing per file. A submission's four criterion records
// share one line, so replaying any prefix never yields a partial submission.
// A torn final line (crash mid-write) is dropped and cut off the file on load.

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include "httplib.h"
#include "streetreview/core.hpp"
#include "streetreview/dataset.hpp"
#include "streetreview/ratings.hpp"

namespace streetreview::service {

enum class SessionStage { individual, collective, ranking, closed };

inline constexpr std::array<std::string_view, 4> kSessionStageNames = {
    "individual", "collective", "ranking", "closed"};

inline std::string_view to_string(SessionStage s) { return kSessionStageNames[static_cast<int>(s)]; }

inline SessionStage session_stage_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kSessionStageNames.size(); ++i)
    if (kSessionStageNames[i] == s) return static_cast<SessionStage>(i);
  throw invalid_argument("unknown stage: " + std::string(s));
}

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path data_dir = "data";
  std::filesystem::path catalog_path;
  std::filesystem::path image_dir;  // empty: relative image paths resolve against the catalog's directory
  bool per_participant_order = false;
};

inline ServiceConfig service_config_from_json(const json& j) {
  ServiceConfig c;
  c.host = j.value("host", c.host);
  c.port = j.value("port", c.port);
  if (j.contains("data_dir")) c.data_dir = j.at("data_dir").get<std::string>();
  if (j.contains("catalog_path")) c.catalog_path = j.at("catalog_path").get<std::string>();
  if (j.contains("image_dir")) c.image_dir = j.at("image_dir").get<std::string>();
  c.per_participant_order = j.value("per_participant_order", false);
  return c;
}

// STREETREVIEW_HOST, _PORT, _DATA_DIR, _CATALOG, _IMAGE_DIR.
inline void apply_env_overrides(ServiceConfig& c) {
  auto env = [](const char* name) -> std::optional<std::string> {
    const char* v = std::getenv(name);
    return v && *v ? std::optional<std::string>(v) : std::nullopt;
  };
  if (auto v = env("STREETREVIEW_HOST")) c.host = *v;
  if (auto v = env("STREETREVIEW_PORT")) {
    try {
      c.port = std::stoi(*v);
    } catch (const std::exception&) {
      throw invalid_argument("STREETREVIEW_PORT is not a number: " + *v);
    }
  }
  if (auto v = env("STREETREVIEW_DATA_DIR")) c.data_dir = *v;
  if (auto v = env("STREETREVIEW_CATALOG")) c.catalog_path = *v;
  if (auto v = env("STREETREVIEW_IMAGE_DIR")) c.image_dir = *v;
}

inline ServiceConfig load_service_config(const std::filesystem::path& path) {
  ServiceConfig c;
  if (!path.empty()) {
    try {
      c = service_config_from_json(json::parse(read_file(path)));
    } catch (const json::exception& e) {
      throw parse_error(path.string() + ": " + e.what());
    }
  }
  apply_env_overrides(c);
  return c;
}

struct Request {
  std::string method;
  std::string path;
  std::string body;
  std::map<std::string, std::string> query;
};

struct Response {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";

  json json_body() const { return body.empty() ? json() : json::parse(body); }
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[40];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900,
                tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
  return buf;
}

namespace detail {

inline void append_durable(const std::filesystem::path& path, const std::string& line) {
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (fd < 0) throw io_error("cannot open store " + path.string());
  const char* p = line.data();
  std::size_t left = line.size();
  while (left > 0) {
    const ssize_t n = ::write(fd, p, left);
    if (n < 0) {
      if (errno == EINTR) continue;
      ::close(fd);
      throw io_error("write failed on " + path.string());
    }
    p += n;
    left -= static_cast<std::size_t>(n);
  }
  const int rc = ::fsync(fd);
  ::close(fd);
  if (rc != 0) throw io_error("fsync failed on " + path.string());
}

struct HttpError {
  int status;
  std::string code;
  std::string message;
};

[[noreturn]] inline void fail(int status, std::string code, std::string message) {
  throw HttpError{status, std::move(code), std::move(message)};
}

inline std::vector<std::string> split_path(std::string_view path) {
  std::vector<std::string> parts;
  std::size_t i = 0;
  while (i < path.size()) {
    while (i < path.size() && path[i] == '/') ++i;
    const std::size_t j = path.find('/', i);
    const std::size_t end = j == std::string_view::npos ? path.size() : j;
    if (end > i) parts.emplace_back(path.substr(i, end - i));
    i = end;
  }
  return parts;
}

}  // namespace detail

struct Session {
  std::string session_id;
  std::uint64_t seed = 0;
  std::string created_at;
  std::vector<ratings::Participant> roster;
  std::vector<std::string> item_order;
  SessionStage stage = SessionStage::individual;
  std::vector<ratings::RatingRecord> ratings;
  std::vector<ratings::RankingRecord> rankings;
  std::uint64_t last_seq = 0;

  // Derived indexes, rebuilt on every applied entry.
  std::map<std::string, std::set<std::string>> rated;  // participant -> points (individual)
  std::set<std::string> collective_done;

  const ratings::Participant* member(std::string_view id) const {
    for (const auto& p : roster)
      if (p.participant_id == id) return &p;
    return nullptr;
  }
  bool has_point(std::string_view id) const {
    return std::find(item_order.begin(), item_order.end(), id) != item_order.end();
  }
};

inline json session_descriptor(const Session& s) {
  json roster = json::array();
  for (const auto& p : s.roster) roster.push_back(ratings::to_json(p));
  return {{"session_id", s.session_id}, {"seed", s.seed},         {"created_at", s.created_at},
          {"roster", roster},           {"item_order", s.item_order}, {"stage", to_string(s.stage)}};
}

class Service {
 public:
  using Clock = std::function<std::string()>;

  Service(dataset::Catalog catalog, ServiceConfig cfg, Clock clock = utc_timestamp)
      : catalog_(std::move(catalog)), cfg_(std::move(cfg)), clock_(std::move(clock)) {
    std::filesystem::create_directories(store_dir());
    replay();
  }

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;
  ~Service() { stop(); }

  const ServiceConfig& config() const { return cfg_; }
  std::filesystem::path store_dir() const { return cfg_.data_dir / "sessions"; }
  std::filesystem::path store_path(const std::string& id) const {
    return store_dir() / (id + ".jsonl");
  }

  std::size_t session_count() const {
    std::shared_lock lock(mu_);
    return sessions_.size();
  }

  // Routes one request; never throws.
  Response handle(const Request& req) {
    try {
      return route(req);
    } catch (const detail::HttpError& e) {
      return error_response(e.status, e.code, e.message);
    } catch (const json::exception& e) {
      return error_response(400, "bad_request", e.what());
    } catch (const Error& e) {
      return error_response(400, e.code(), e.what());
    } catch (const std::exception& e) {
      return error_response(500, "internal", e.what());
    }
  }

  // Binds and serves until stop(). port 0 picks a free port; the bound port is
  // returned through on_bound before requests are accepted.
  void serve(const std::function<void(int)>& on_bound = {}) {
    {
      std::lock_guard lock(server_mu_);
      server_ = std::make_unique<httplib::Server>();
    }
    auto bridge = [this](const httplib::Request& hreq, httplib::Response& hres) {
      Request req{hreq.method, hreq.path, hreq.body, {}};
      for (const auto& [k, v] : hreq.params) req.query[k] = v;
      const Response r = handle(req);
      hres.status = r.status;
      if (r.status != 204) hres.set_content(r.body, r.content_type);
    };
    server_->Get(R"(/.*)", bridge);
    server_->Post(R"(/.*)", bridge);
    int port = cfg_.port;
    if (port == 0) {
      port = server_->bind_to_any_port(cfg_.host);
      if (port < 0) throw io_error("cannot bind " + cfg_.host);
    } else if (!server_->bind_to_port(cfg_.host, port)) {
      throw io_error("cannot bind " + cfg_.host + ":" + std::to_string(port));
    }
    if (on_bound) on_bound(port);
    server_->listen_after_bind();
  }

  void stop() {
    std::lock_guard lock(server_mu_);
    if (server_) server_->stop();
  }

 private:
  static Response json_response(int status, const json& j) { return {status, j.dump(), "application/json"}; }

  static Response error_response(int status, const std::string& code, const std::string& msg) {
    return json_response(status, {{"error", code}, {"message", msg}});
  }

  static json parse_body(const Request& req) {
    if (req.body.empty()) detail::fail(400, "bad_request", "empty request body");
    json j = json::parse(req.body, nullptr, false);
    if (j.is_discarded() || !j.is_object())
      detail::fail(400, "bad_request", "request body is not a JSON object");
    return j;
  }

  Response route(const Request& req) {
    const auto parts = detail::split_path(req.path);
    const bool get = req.method == "GET", post = req.method == "POST";
    if (parts.size() == 1 && parts[0] == "scale" && get) return scale();
    if (parts.size() == 2 && parts[0] == "images" && get) return image(parts[1]);
    if (parts.size() == 1 && parts[0] == "sessions" && post) return create_session(parse_body(req));
    if (parts.size() == 3 && parts[0] == "sessions") {
      const auto& id = parts[1];
      const auto& op = parts[2];
      if (op == "next" && get) {
        auto it = req.query.find("participant_id");
        if (it == req.query.end()) detail::fail(400, "bad_request", "participant_id query parameter required");
        return next_item(id, it->second);
      }
      if (op == "export" && get) return export_session(id);
      if (op == "ratings" && post) return submit_rating(id, parse_body(req));
      if (op == "rankings" && post) return submit_ranking(id, parse_body(req));
      if (op == "stage" && post) return advance_stage(id, parse_body(req));
    }
    detail::fail(404, "not_found", req.method + " " + req.path);
  }

  Response scale() const {
    json out = json::object();
    for (auto c : ratings::kCriteria) {
      json levels = json::array();
      for (int v = 0; v < 4; ++v)
        levels.push_back({{"score", v + 1},
                          {"descriptor", ratings::kScaleDescriptors[static_cast<int>(c)][v]}});
      out[std::string(ratings::to_string(c))] = levels;
    }
    return json_response(200, {{"criteria", ratings::kCriterionNames}, {"scale", out}});
  }

  std::filesystem::path resolve_image(const dataset::Frame& f) const {
    std::filesystem::path p = f.image_path;
    if (p.is_absolute()) return p;
    if (!cfg_.image_dir.empty()) return cfg_.image_dir / p;
    return cfg_.catalog_path.parent_path() / p;
  }

  Response image(const std::string& frame_id) const {
    const auto* f = catalog_.find_frame(frame_id);
    if (!f) detail::fail(404, "not_found", "unknown frame " + frame_id);
    const auto path = resolve_image(*f);
    if (!std::filesystem::is_regular_file(path))
      detail::fail(404, "not_found", "image file missing for frame " + frame_id);
    const auto ext = path.extension().string();
    std::string type = "application/octet-stream";
    if (ext == ".png") type = "image/png";
    else if (ext == ".jpg" || ext == ".jpeg") type = "image/jpeg";
    return {200, read_file(path), type};
  }

  // --- sessions -----------------------------------------------------------

  Session& find_session(const std::string& id) {
    auto it = sessions_.find(id);
    if (it == sessions_.end()) detail::fail(404, "not_found", "unknown session " + id);
    return it->second;
  }

  std::vector<std::string> order_for(const Session& s, const std::string& participant) const {
    if (!cfg_.per_participant_order) return s.item_order;
    auto order = s.item_order;
    Rng rng(derive_seed(s.seed, participant));
    shuffle(order, rng);
    return order;
  }

  json image_pair(const std::string& point_id) const {
    const auto& idx = catalog_.frames_of(point_id);
    json pair = json::array();
    if (idx.empty()) return pair;
    const auto& first = catalog_.frames()[idx[0]];
    // The opposing view: the frame whose angle is circularly nearest to the
    // first frame's angle plus half a turn.
    const int target = (first.angle_index + dataset::kFramesPerPoint / 2) % dataset::kFramesPerPoint;
    const dataset::Frame* best = &first;
    int best_d = dataset::kFramesPerPoint + 1;
    for (auto i : idx) {
      const auto& f = catalog_.frames()[i];
      if (&f == &first) continue;
      const int raw = std::abs(f.angle_index - target);
      const int d = std::min(raw, dataset::kFramesPerPoint - raw);
      if (d < best_d) {
        best_d = d;
        best = &f;
      }
    }
    for (const auto* f : {&first, best})
      pair.push_back({{"frame_id", f->frame_id},
                      {"angle_index", f->angle_index},
                      {"url", "/images/" + f->frame_id}});
    return pair;
  }

  Response create_session(const json& body) {
    std::vector<ratings::Participant> roster;
    try {
      roster = ratings::parse_roster(body.at("roster"));
    } catch (const Error& e) {
      detail::fail(400, "bad_roster", e.what());
    }
    if (roster.empty()) detail::fail(400, "bad_roster", "roster is empty");
    std::vector<std::string> points;
    if (body.contains("point_ids")) {
      points = body.at("point_ids").get<std::vector<std::string>>();
    } else {
      for (const auto& p : catalog_.points()) points.push_back(p.point_id);
    }
    if (points.empty()) detail::fail(400, "bad_points", "point set is empty");
    std::set<std::string> seen;
    for (const auto& p : points) {
      if (!catalog_.find_point(p)) detail::fail(400, "unknown_point", "unknown point " + p);
      if (!seen.insert(p).second) detail::fail(400, "bad_points", "duplicate point " + p);
    }
    const std::uint64_t seed = body.value("seed", std::uint64_t{0});

    std::unique_lock lock(mu_);
    Session s;
    std::size_t n = sessions_.size() + 1;
    do {
      char buf[16];
      std::snprintf(buf, sizeof buf, "s%04zu", n++);
      s.session_id = buf;
    } while (sessions_.contains(s.session_id) || std::filesystem::exists(store_path(s.session_id)));
    s.seed = seed;
    s.created_at = clock_();
    s.roster = std::move(roster);
    s.item_order = std::move(points);
    Rng rng(seed);
    shuffle(s.item_order, rng);

    json roster_j = json::array();
    for (const auto& p : s.roster) roster_j.push_back(ratings::to_json(p));
    json entry = {{"type", "session_created"},
                  {"session",
                   {{"session_id", s.session_id},
                    {"seed", s.seed},
                    {"created_at", s.created_at},
                    {"roster", roster_j},
                    {"item_order", s.item_order}}}};
    const auto id = s.session_id;
    auto& stored = sessions_.emplace(id, std::move(s)).first->second;
    commit(stored, std::move(entry));
    return json_response(201, session_descriptor(stored));
  }

  Response next_item(const std::string& id, const std::string& participant) {
    std::shared_lock lock(mu_);
    const Session& s = find_session(id);
    if (!s.member(participant))
      detail::fail(403, "forbidden", "participant " + participant + " is not in session " + id);
    if (s.stage == SessionStage::closed) detail::fail(409, "stage", "session is closed");
    if (s.stage == SessionStage::ranking) return {204, "", "application/json"};
    const auto order = order_for(s, participant);
    const auto rated = s.rated.find(participant);
    std::size_t done = 0;
    const std::string* next = nullptr;
    for (const auto& p : order) {
      const bool is_done = s.stage == SessionStage::collective
                               ? s.collective_done.contains(p)
                               : rated != s.rated.end() && rated->second.contains(p);
      if (is_done)
        ++done;
      else if (!next)
        next = &p;
    }
    if (!next) return {204, "", "application/json"};
    json scale_j = json::object();
    for (auto c : ratings::kCriteria) {
      json levels = json::array();
      for (const auto& d : ratings::kScaleDescriptors[static_cast<int>(c)]) levels.push_back(d);
      scale_j[std::string(ratings::to_string(c))] = levels;
    }
    return json_response(200, {{"point_id", *next},
                               {"stage", to_string(s.stage)},
                               {"image_pair", image_pair(*next)},
                               {"criteria", ratings::kCriterionNames},
                               {"scale", scale_j},
                               {"progress", {{"done", done}, {"total", order.size()}}}});
  }

  Response submit_rating(const std::string& id, const json& body) {
    std::string participant, point, stage_s;
    try {
      participant = body.at("participant_id").get<std::string>();
      point = body.at("point_id").get<std::string>();
      stage_s = body.at("stage").get<std::string>();
    } catch (const json::exception& e) {
      detail::fail(400, "bad_request", e.what());
    }
    ratings::Stage stage;
    try {
      stage = ratings::stage_from_string(stage_s);
    } catch (const Error& e) {
      detail::fail(422, "invalid", e.what());
    }
    const json& values = body.contains("values") ? body.at("values") : json();
    if (!values.is_object()) detail::fail(422, "invalid", "values must map each criterion to 1..4");
    std::array<int, ratings::kNumCriteria> v{};
    for (auto c : ratings::kCriteria) {
      const auto name = std::string(ratings::to_string(c));
      if (!values.contains(name) || !values.at(name).is_number_integer())
        detail::fail(422, "invalid", "missing or non-integer value for " + name);
      const auto x = values.at(name).get<long long>();
      if (x < 1 || x > 4)
        detail::fail(422, "invalid", name + " value " + std::to_string(x) + " outside 1..4");
      v[static_cast<int>(c)] = static_cast<int>(x);
    }
    if (values.size() != ratings::kNumCriteria)
      detail::fail(422, "invalid", "values must contain exactly the four criteria");

    std::unique_lock lock(mu_);
    Session& s = find_session(id);
    const auto* who = s.member(participant);
    if (!who) detail::fail(403, "forbidden", "participant " + participant + " is not in session " + id);
    if (!s.has_point(point)) detail::fail(422, "invalid", "point " + point + " is not in session " + id);
    const bool collective = stage == ratings::Stage::collective;
    const auto expected = collective ? SessionStage::collective : SessionStage::individual;
    if (s.stage != expected)
      detail::fail(409, "stage", "session is in stage " + std::string(to_string(s.stage)) +
                                     ", not " + stage_s);
    if (collective && !who->facilitator)
      detail::fail(403, "forbidden", "collective ratings are entered by a facilitator");
    if (collective ? s.collective_done.contains(point) : s.rated[participant].contains(point))
      detail::fail(409, "duplicate", "point " + point + " already rated in stage " + stage_s);

    json records = json::array();
    for (auto c : ratings::kCriteria)
      records.push_back(ratings::to_json(ratings::RatingRecord{
          collective ? id : participant, point, c, v[static_cast<int>(c)], stage, id}));
    commit(s, {{"type", "ratings"}, {"records", records}});
    return json_response(200, {{"ok", true}, {"seq", s.last_seq}, {"records", 4}});
  }

  Response submit_ranking(const std::string& id, const json& body) {
    std::unique_lock lock(mu_);
    Session& s = find_session(id);
    if (s.stage != SessionStage::ranking)
      detail::fail(409, "stage", "rankings are accepted only in stage ranking");
    json rec = body;
    rec["session_id"] = id;
    ratings::RankingRecord r;
    try {
      r = ratings::ranking_from_json(rec);
    } catch (const std::exception& e) {
      detail::fail(422, "invalid", e.what());
    }
    for (const auto& set : {r.most_inclusive, r.least_inclusive})
      for (const auto& p : set)
        if (!s.has_point(p)) detail::fail(422, "invalid", "point " + p + " is not in session " + id);
    if (!s.rankings.empty()) detail::fail(409, "duplicate", "session already has a ranking");
    commit(s, {{"type", "ranking"}, {"record", ratings::to_json(r)}});
    return json_response(200, {{"ok", true}, {"seq", s.last_seq}});
  }

  Response advance_stage(const std::string& id, const json& body) {
    SessionStage to;
    try {
      to = session_stage_from_string(body.at("stage").get<std::string>());
    } catch (const std::exception& e) {
      detail::fail(422, "invalid", e.what());
    }
    std::unique_lock lock(mu_);
    Session& s = find_session(id);
    if (static_cast<int>(to) != static_cast<int>(s.stage) + 1)
      detail::fail(409, "stage", "cannot move from " + std::string(to_string(s.stage)) + " to " +
                                     std::string(to_string(to)));
    commit(s, {{"type", "stage"}, {"stage", to_string(to)}});
    return json_response(200, {{"ok", true}, {"stage", to_string(s.stage)}});
  }

  Response export_session(const std::string& id) {
    std::shared_lock lock(mu_);
    const Session& s = find_session(id);
    json out = session_descriptor(s);
    json rs = json::array(), ks = json::array();
    for (const auto& r : s.ratings) rs.push_back(ratings::to_json(r));
    for (const auto& k : s.rankings) ks.push_back(ratings::to_json(k));
    out["ratings"] = rs;
    out["rankings"] = ks;
    return json_response(200, out);
  }

  // --- store ----------------------------------------------------------------

  // Caller holds the unique lock: one writer at a time, and the in-memory
  // state only changes after the entry is durable.
  void commit(Session& s, json entry) {
    entry["seq"] = s.last_seq + 1;
    entry["ts"] = clock_();
    detail::append_durable(store_path(s.session_id), entry.dump() + "\n");
    apply(s, entry);
  }

  static void apply(Session& s, const json& e) {
    const auto seq = e.at("seq").get<std::uint64_t>();
    if (seq <= s.last_seq)
      throw format_error("store " + s.session_id + ": sequence " + std::to_string(seq) +
                         " not increasing");
    const auto type = e.at("type").get<std::string>();
    if (type == "session_created") {
      const auto& j = e.at("session");
      s.session_id = j.at("session_id").get<std::string>();
      s.seed = j.at("seed").get<std::uint64_t>();
      s.created_at = j.at("created_at").get<std::string>();
      s.roster = ratings::parse_roster(j.at("roster"));
      s.item_order = j.at("item_order").get<std::vector<std::string>>();
    } else if (type == "ratings") {
      for (const auto& r : e.at("records")) {
        auto rec = ratings::rating_from_json(r);
        if (rec.stage == ratings::Stage::collective)
          s.collective_done.insert(rec.point_id);
        else
          s.rated[rec.participant_id].insert(rec.point_id);
        s.ratings.push_back(std::move(rec));
      }
    } else if (type == "ranking") {
      s.rankings.push_back(ratings::ranking_from_json(e.at("record")));
    } else if (type == "stage") {
      s.stage = session_stage_from_string(e.at("stage").get<std::string>());
    } else {
      throw format_error("store " + s.session_id + ": unknown entry type " + type);
    }
    s.last_seq = seq;
  }

  void replay() {
    std::vector<std::filesystem::path> files;
    for (const auto& de : std::filesystem::directory_iterator(store_dir()))
      if (de.path().extension() == ".jsonl") files.push_back(de.path());
    std::sort(files.begin(), files.end());
    for (const auto& path : files) {
      const std::string text = read_file(path);
      Session s;
      s.session_id = path.stem().string();
      std::size_t pos = 0, good_end = 0, line_no = 0;
      while (pos < text.size()) {
        const std::size_t nl = text.find('\n', pos);
        ++line_no;
        const bool torn = nl == std::string::npos;
        const std::string_view line(text.data() + pos, (torn ? text.size() : nl) - pos);
        const json e = json::parse(line, nullptr, false);
        if (torn || e.is_discarded()) {
          if (torn) break;
          throw format_error(path.string() + ":" + std::to_string(line_no) + ": corrupt store entry");
        }
        try {
          apply(s, e);
        } catch (const std::exception& ex) {
          throw format_error(path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
        }
        pos = good_end = nl + 1;
      }
      if (good_end < text.size()) std::filesystem::resize_file(path, good_end);
      if (s.last_seq == 0) continue;  // nothing durable yet
      sessions_.emplace(s.session_id, std::move(s));
    }
  }

  dataset::Catalog catalog_;
  ServiceConfig cfg_;
  Clock clock_;
  mutable std::shared_mutex mu_;
  std::map<std::string, Session> sessions_;
  std::mutex server_mu_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace streetreview::service
