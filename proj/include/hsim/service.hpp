#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstring>
#include <ctime>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "hsim/corpus.hpp"
#include "hsim/error.hpp"
#include "hsim/eval.hpp"
#include "hsim/pipeline.hpp"
#include "hsim/snapshot.hpp"

// After Eigen: <resolv.h> defines a _res macro.
#include "httplib.h"

namespace hsim::service {

inline std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[40];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

// ---------------------------------------------------------------------------
// Label events

struct LabelEvent {
  std::uint64_t seq = 0;
  std::string doc_id;
  std::size_t chosen_leaf = 0;
  std::vector<std::size_t> offered;  // permutation shown to the expert
  std::string expert_id;
  std::string timestamp;
  bool override_previous = false;

  friend bool operator==(const LabelEvent&, const LabelEvent&) = default;
};

inline json to_json(const LabelEvent& e) {
  return {{"seq", e.seq},
          {"doc_id", e.doc_id},
          {"chosen_leaf", e.chosen_leaf},
          {"offered", e.offered},
          {"expert_id", e.expert_id},
          {"timestamp", e.timestamp},
          {"override", e.override_previous}};
}

inline LabelEvent label_event_from_json(const json& j) {
  LabelEvent e;
  e.seq = j.at("seq").get<std::uint64_t>();
  e.doc_id = j.at("doc_id").get<std::string>();
  e.chosen_leaf = j.at("chosen_leaf").get<std::size_t>();
  e.offered = j.at("offered").get<std::vector<std::size_t>>();
  e.expert_id = j.value("expert_id", "");
  e.timestamp = j.value("timestamp", "");
  e.override_previous = j.value("override", false);
  return e;
}

/// Append-only JSONL file of label events. Every append is flushed to stable
/// storage before it returns.
class LabelLog {
 public:
  /// A truncated last line left by an interrupted write is cut off so that
  /// new events start on a fresh line.
  explicit LabelLog(std::string path) : path_(std::move(path)) {
    events_ = read(path_);
    drop_partial_line();
    fd_ = ::open(path_.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
    if (fd_ < 0) throw IoFailure("cannot open label log " + path_ + ": " + std::strerror(errno));
  }
  ~LabelLog() {
    if (fd_ >= 0) ::close(fd_);
  }
  LabelLog(const LabelLog&) = delete;
  LabelLog& operator=(const LabelLog&) = delete;

  const std::string& path() const { return path_; }
  const std::vector<LabelEvent>& events() const { return events_; }
  std::uint64_t next_seq() const { return events_.empty() ? 1 : events_.back().seq + 1; }

  /// Assigns the next sequence number, writes and syncs. The event is added
  /// to the in-memory history only after the sync succeeded.
  std::uint64_t append(LabelEvent e) {
    e.seq = next_seq();
    const std::string line = to_json(e).dump() + "\n";
    std::size_t off = 0;
    while (off < line.size()) {
      const auto n = ::write(fd_, line.data() + off, line.size() - off);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw IoFailure("label log write failed: " + std::string(std::strerror(errno)));
      }
      off += static_cast<std::size_t>(n);
    }
    if (::fsync(fd_) != 0) throw IoFailure("label log fsync failed: " + std::string(std::strerror(errno)));
    events_.push_back(e);
    return e.seq;
  }

  /// Reads a log; a truncated final line (interrupted write) is ignored.
  /// Devices and other non-regular files read as empty.
  static std::vector<LabelEvent> read(const std::string& path) {
    std::vector<LabelEvent> out;
    std::error_code ec;
    if (!std::filesystem::is_regular_file(path, ec)) return out;
    std::ifstream in(path);
    if (!in) return out;
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line))
      if (line.find_first_not_of(" \t\r") != std::string::npos) lines.push_back(line);
    for (std::size_t i = 0; i < lines.size(); ++i) {
      try {
        out.push_back(label_event_from_json(json::parse(lines[i])));
      } catch (const json::exception& e) {
        if (i + 1 == lines.size()) {
          log::warn("ignoring truncated last line of label log " + path);
          break;
        }
        throw FormatError("label log " + path + " line " + std::to_string(i + 1) + ": " + e.what());
      }
    }
    return out;
  }

 private:
  void drop_partial_line() const {
    std::error_code ec;
    if (!std::filesystem::is_regular_file(path_, ec)) return;
    std::ifstream in(path_, std::ios::binary);
    const std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (content.empty() || content.back() == '\n') return;
    const auto keep = content.rfind('\n');
    std::filesystem::resize_file(path_, keep == std::string::npos ? 0 : keep + 1, ec);
    if (ec) throw IoFailure("cannot repair label log " + path_ + ": " + ec.message());
  }

  std::string path_;
  int fd_ = -1;
  std::vector<LabelEvent> events_;
};

/// Labels after applying the events in order to the corpus labels.
inline LabelMatrix replay(const Corpus& corpus, const std::vector<LabelEvent>& events) {
  LabelMatrix labels = corpus.labels();
  for (const auto& e : events) {
    const auto n = corpus.find(e.doc_id);
    if (!n) throw FormatError("label event for unknown document '" + e.doc_id + "'");
    labels.set(*n, e.chosen_leaf);
  }
  return labels;
}

// ---------------------------------------------------------------------------
// Model registry

struct RegistryEntry {
  std::size_t version = 0;
  std::shared_ptr<const Snapshot> snapshot;
  std::string registered_at;
  json report;  // held-out evaluation at registration time, or null
};

/// Holds immutable snapshots; readers get a shared pointer to the active one.
class ModelRegistry {
 public:
  std::shared_ptr<const RegistryEntry> active() const {
    std::lock_guard lock(mu_);
    return active_;
  }

  std::size_t publish(Snapshot s, json report = nullptr) {
    auto entry = std::make_shared<RegistryEntry>();
    entry->snapshot = std::make_shared<const Snapshot>(std::move(s));
    entry->registered_at = utc_now();
    entry->report = std::move(report);
    std::lock_guard lock(mu_);
    entry->version = history_.size() + 1;
    active_ = entry;
    history_.push_back(active_);
    return entry->version;
  }

  std::vector<std::shared_ptr<const RegistryEntry>> history() const {
    std::lock_guard lock(mu_);
    return history_;
  }

 private:
  mutable std::mutex mu_;
  std::shared_ptr<const RegistryEntry> active_;
  std::vector<std::shared_ptr<const RegistryEntry>> history_;
};

// ---------------------------------------------------------------------------
// Service

struct Reply {
  int status = 200;
  json body;
};

struct ServiceConfig {
  std::string label_log = "labels.jsonl";
  std::string snapshot_dir;  // retrained snapshots are saved here when set
  std::size_t queue_top = 3;
  std::size_t summary_words = 12;
  TokenizerConfig tokenizer;
};

struct RetrainJob {
  std::size_t id = 0;
  std::string status = "queued";  // queued, running, done, failed
  json request;
  std::optional<std::size_t> version;
  std::string error;
  std::string submitted_at, finished_at;
};

inline json to_json(const RetrainJob& j) {
  json out = {{"job", j.id}, {"status", j.status}, {"request", j.request}, {"submitted_at", j.submitted_at}};
  if (j.version) out["model_version"] = *j.version;
  if (!j.error.empty()) out["error"] = j.error;
  if (!j.finished_at.empty()) out["finished_at"] = j.finished_at;
  return out;
}

class Service {
 public:
  Service(Corpus corpus, ServiceConfig config = {})
      : corpus_(std::move(corpus)), config_(std::move(config)), log_(config_.label_log) {
    labels_ = replay(corpus_, log_.events());
    labeled_by_.assign(corpus_.size(), std::nullopt);
    for (std::size_t n = 0; n < corpus_.size(); ++n)
      if (corpus_.labels().leaf(n)) labeled_by_[n] = "corpus";
    for (const auto& e : log_.events()) labeled_by_[corpus_.index_of(e.doc_id)] = e.expert_id;
    worker_ = std::thread([this] { run_worker(); });
  }

  ~Service() {
    {
      std::lock_guard lock(jobs_mu_);
      stopping_ = true;
    }
    jobs_cv_.notify_all();
    if (worker_.joinable()) worker_.join();
  }

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  ModelRegistry& registry() { return registry_; }
  const Corpus& corpus() const { return corpus_; }

  /// Registers a snapshot and evaluates it on its held-out ids under the
  /// current labels.
  std::size_t publish(Snapshot s) {
    json report = nullptr;
    if (s.partition) {
      const Corpus current = labeled_corpus();
      if (auto rep = evaluate_on(s.model, current, s.partition->test)) report = report_to_json(*rep);
    }
    return registry_.publish(std::move(s), std::move(report));
  }

  /// Corpus with the current labels, initial plus logged.
  Corpus labeled_corpus() const {
    std::shared_lock lock(state_mu_);
    return corpus_.with_labels(labels_);
  }

  LabelMatrix current_labels() const {
    std::shared_lock lock(state_mu_);
    return labels_;
  }

  std::vector<LabelEvent> events() const {
    std::shared_lock lock(state_mu_);
    return log_.events();
  }

  // -- handlers ------------------------------------------------------------

  Reply tree() const {
    json leaves = json::array();
    const auto& t = corpus_.tree();
    for (std::size_t k = 0; k < t.leaf_count(); ++k)
      leaves.push_back({{"leaf", k}, {"name", t.leaf_name(k)}, {"path", t.branch_names(k)}});
    return {200, {{"tree", t.to_json()}, {"height", t.height()}, {"leaves", std::move(leaves)}}};
  }

  Reply queue() const {
    const auto entry = registry_.active();
    if (!entry) return no_model();
    const auto& snap = *entry->snapshot;
    struct Item {
      std::size_t n;
      double margin;
      json body;
    };
    std::vector<Item> items;
    {
      std::shared_lock lock(state_mu_);
      for (std::size_t n = 0; n < corpus_.size(); ++n) {
        if (labels_.leaf(n)) continue;
        const auto r = rank_snapshot(snap, remap(corpus_.document(n).counts, corpus_.dictionary(), snap.model.dictionary));
        const auto& sc = r.ranked.scores;
        const double margin = sc.size() > 1 ? sc[0] - sc[1] : 0.0;
        json top = ranking_json(snap, r, config_.queue_top);
        items.push_back({n, margin, {{"id", corpus_.document(n).id}, {"summary", summary(n)}, {"margin", margin},
                                     {"flagged", r.degenerate}, {"top", std::move(top)}}});
      }
    }
    std::stable_sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.margin < b.margin; });
    json out = json::array();
    for (auto& i : items) out.push_back(std::move(i.body));
    return {200, {{"model_version", entry->version}, {"items", std::move(out)}}};
  }

  Reply doc(const std::string& id) const {
    const auto n = corpus_.find(id);
    if (!n) return error(404, "unknown document '" + id + "'");
    json body = {{"id", id}, {"text", join_tokens(*n, 0)}};
    {
      std::shared_lock lock(state_mu_);
      const auto& leaf = labels_.leaf(*n);
      body["leaf"] = leaf ? json(*leaf) : json(nullptr);
      body["leaf_name"] = leaf ? json(corpus_.tree().leaf_name(*leaf)) : json(nullptr);
      body["labeled_by"] = labeled_by_[*n] ? json(*labeled_by_[*n]) : json(nullptr);
      json history = json::array();
      for (const auto& e : log_.events())
        if (e.doc_id == id) history.push_back(to_json(e));
      body["history"] = std::move(history);
    }
    if (const auto entry = registry_.active()) {
      const auto& snap = *entry->snapshot;
      const auto r = rank_snapshot(snap, remap(corpus_.document(*n).counts, corpus_.dictionary(), snap.model.dictionary));
      body["model_version"] = entry->version;
      body["ranking"] = ranking_json(snap, r, snap.model.leaves());
      body["flagged"] = r.degenerate;
    }
    return {200, std::move(body)};
  }

  Reply rank(const json& req) const {
    const auto entry = registry_.active();
    if (!entry) return no_model();
    const auto& snap = *entry->snapshot;
    SparseVector x;
    if (req.contains("doc_id")) {
      if (!req["doc_id"].is_string()) return error(400, "'doc_id' must be a string");
      const auto n = corpus_.find(req["doc_id"].get<std::string>());
      if (!n) return error(404, "unknown document '" + req["doc_id"].get<std::string>() + "'");
      x = remap(corpus_.document(*n).counts, corpus_.dictionary(), snap.model.dictionary);
    } else if (req.contains("text") && req["text"].is_string()) {
      x = vectorize_text(req["text"].get<std::string>(), snap.model.dictionary, config_.tokenizer);
    } else {
      return error(400, "request needs 'text' or 'doc_id'");
    }
    const auto r = rank_snapshot(snap, x);
    json body = {{"model_version", entry->version},
                 {"method", snap.method},
                 {"flagged", r.degenerate},
                 {"leaves", ranking_json(snap, r, snap.model.leaves())}};
    if (r.degenerate) {
      body["warning"] = "no dictionary words in the document; leaves are in index order";
      return {422, std::move(body)};
    }
    return {200, std::move(body)};
  }

  Reply label(const json& req) {
    if (!req.is_object() || !req.contains("doc_id") || !req["doc_id"].is_string())
      return error(400, "request needs a string 'doc_id'");
    const std::string id = req["doc_id"].get<std::string>();
    const auto n = corpus_.find(id);
    if (!n) return error(404, "unknown document '" + id + "'");
    const auto& tree = corpus_.tree();

    std::size_t leaf = 0;
    try {
      const auto& l = req.at("leaf");
      if (l.is_number_unsigned() || l.is_number_integer()) {
        const auto v = l.get<std::int64_t>();
        if (v < 0 || static_cast<std::size_t>(v) >= tree.leaf_count()) return error(400, "leaf index out of range");
        leaf = static_cast<std::size_t>(v);
      } else if (l.is_string()) {
        leaf = tree.find_leaf(l.get<std::string>());
      } else {
        return error(400, "'leaf' must be an index or a name");
      }
    } catch (const json::exception&) {
      return error(400, "request needs 'leaf'");
    } catch (const UnknownLeaf& e) {
      return error(400, e.what());
    }

    std::vector<std::size_t> offered;
    if (req.contains("offered")) {
      try {
        offered = req["offered"].get<std::vector<std::size_t>>();
      } catch (const json::exception&) {
        return error(400, "'offered' must be a list of leaf indices");
      }
    } else {
      const auto entry = registry_.active();
      if (!entry) return no_model();
      const auto& snap = *entry->snapshot;
      offered = rank_snapshot(snap, remap(corpus_.document(*n).counts, corpus_.dictionary(), snap.model.dictionary))
                    .ranked.order;
    }
    if (std::find(offered.begin(), offered.end(), leaf) == offered.end())
      return error(400, "chosen leaf is not in the offered permutation");

    LabelEvent e;
    e.doc_id = id;
    e.chosen_leaf = leaf;
    e.offered = std::move(offered);
    e.expert_id = req.value("expert_id", std::string{});
    e.override_previous = req.value("override", false);
    e.timestamp = utc_now();

    std::unique_lock lock(state_mu_);
    if (labels_.leaf(*n) && !e.override_previous) {
      json body = {{"error", "document already labeled"},
                   {"doc_id", id},
                   {"leaf", *labels_.leaf(*n)},
                   {"labeled_by", labeled_by_[*n] ? json(*labeled_by_[*n]) : json(nullptr)}};
      return {409, std::move(body)};
    }
    std::uint64_t seq = 0;
    try {
      seq = log_.append(e);
    } catch (const IoFailure& err) {
      return error(500, err.what());
    }
    labels_.set(*n, leaf);
    labeled_by_[*n] = e.expert_id;
    return {200, {{"seq", seq}, {"doc_id", id}, {"leaf", leaf}, {"timestamp", e.timestamp}}};
  }

  Reply metrics() const {
    const auto entry = registry_.active();
    if (!entry) return no_model();
    json body = {{"model",
                  {{"version", entry->version},
                   {"method", entry->snapshot->method},
                   {"registered_at", entry->registered_at},
                   {"training", entry->snapshot->training}}},
                 {"report", entry->report}};
    std::shared_lock lock(state_mu_);
    std::size_t labeled = 0;
    for (std::size_t n = 0; n < corpus_.size(); ++n) labeled += labels_.leaf(n) ? 1 : 0;
    std::map<std::string, std::size_t> by_expert;
    for (const auto& e : log_.events()) ++by_expert[e.expert_id];
    json labels = {{"events", log_.events().size()},
                   {"labeled", labeled},
                   {"unlabeled", corpus_.size() - labeled},
                   {"by_expert", by_expert}};
    if (!log_.events().empty()) {
      labels["first_event"] = log_.events().front().timestamp;
      labels["last_event"] = log_.events().back().timestamp;
    }
    body["labels"] = std::move(labels);
    return {200, std::move(body)};
  }

  /// Queues a retraining job on the current labels. Unset fields default to
  /// the active snapshot's training settings.
  Reply retrain(const json& req) {
    const auto entry = registry_.active();
    if (!entry) return no_model();
    TrainRequest tr;
    try {
      tr = request_from(req, *entry->snapshot);
    } catch (const std::exception& e) {
      return error(400, e.what());
    }
    std::lock_guard lock(jobs_mu_);
    RetrainJob job;
    job.id = jobs_.size() + 1;
    job.request = req.is_object() ? req : json::object();
    job.submitted_at = utc_now();
    jobs_.push_back(job);
    pending_.push_back({job.id, std::move(tr)});
    jobs_cv_.notify_all();
    return {202, to_json(job)};
  }

  Reply job(std::size_t id) const {
    std::lock_guard lock(jobs_mu_);
    if (id < 1 || id > jobs_.size()) return error(404, "unknown job");
    return {200, to_json(jobs_[id - 1])};
  }

  /// Blocks until every submitted job has finished.
  void wait_idle() {
    std::unique_lock lock(jobs_mu_);
    jobs_cv_.wait(lock, [this] { return pending_.empty() && !busy_; });
  }

  /// Registers every route under /api and /api/v1.
  void mount(httplib::Server& svr) {
    auto send = [](httplib::Response& res, const Reply& r) {
      res.status = r.status;
      res.set_content(r.body.dump(), "application/json");
    };
    auto parse = [](const httplib::Request& req) -> std::optional<json> {
      if (req.body.empty()) return json::object();
      try {
        return json::parse(req.body);
      } catch (const json::exception&) {
        return std::nullopt;
      }
    };
    for (const std::string prefix : {"/api", "/api/v1"}) {
      svr.Get(prefix + "/tree", [this, send](const httplib::Request&, httplib::Response& res) { send(res, tree()); });
      svr.Get(prefix + "/queue", [this, send](const httplib::Request&, httplib::Response& res) { send(res, queue()); });
      svr.Get(prefix + "/metrics",
              [this, send](const httplib::Request&, httplib::Response& res) { send(res, metrics()); });
      svr.Get(prefix + R"(/doc/(.+))", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, doc(req.matches[1].str()));
      });
      svr.Get(prefix + R"(/retrain/(\d+))", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, job(std::stoul(req.matches[1].str())));
      });
      svr.Post(prefix + "/rank", [this, send, parse](const httplib::Request& req, httplib::Response& res) {
        auto body = parse(req);
        send(res, body ? rank(*body) : error(400, "malformed JSON body"));
      });
      svr.Post(prefix + "/label", [this, send, parse](const httplib::Request& req, httplib::Response& res) {
        auto body = parse(req);
        send(res, body ? label(*body) : error(400, "malformed JSON body"));
      });
      svr.Post(prefix + "/retrain", [this, send, parse](const httplib::Request& req, httplib::Response& res) {
        auto body = parse(req);
        send(res, body ? retrain(*body) : error(400, "malformed JSON body"));
      });
    }
  }

 private:
  static Reply error(int status, const std::string& msg) { return {status, {{"error", msg}}}; }
  static Reply no_model() { return error(503, "no model is registered"); }

  std::string join_tokens(std::size_t n, std::size_t limit) const {
    const auto& toks = corpus_.document(n).tokens;
    std::string out;
    const std::size_t count = limit ? std::min(limit, toks.size()) : toks.size();
    for (std::size_t i = 0; i < count; ++i) out += (i ? " " : "") + toks[i];
    return out;
  }

  std::string summary(std::size_t n) const {
    std::string s = join_tokens(n, config_.summary_words);
    if (corpus_.document(n).tokens.size() > config_.summary_words) s += " ...";
    return s;
  }

  json ranking_json(const Snapshot& snap, const Ranking& r, std::size_t limit) const {
    json out = json::array();
    const auto& tree = snap.model.tree;
    for (std::size_t i = 0; i < std::min(limit, r.ranked.order.size()); ++i) {
      const auto k = r.ranked.order[i];
      json item = {{"leaf", k}, {"name", tree.leaf_name(k)}, {"path", tree.branch_names(k)}, {"score", r.ranked.scores[i]}};
      if (r.probability) item["probability"] = (*r.probability)[static_cast<Eigen::Index>(k)];
      out.push_back(std::move(item));
    }
    return out;
  }

  static TrainRequest request_from(const json& req, const Snapshot& active) {
    const json body = req.is_object() ? req : json::object();
    const json& prev = active.training;
    TrainRequest tr;
    tr.method = parse_method(body.value("method", prev.value("method", std::string("greedy"))));
    tr.seed = body.value("seed", prev.value("seed", std::uint64_t{1}));
    if (prev.contains("fractions")) {
      const auto f = prev["fractions"].get<std::vector<double>>();
      if (f.size() == 4) tr.fractions = {f[0], f[1], f[2], f[3]};
    }
    if (body.contains("fractions")) {
      const auto f = body["fractions"].get<std::vector<double>>();
      if (f.size() != 4) throw Error("'fractions' needs four values");
      tr.fractions = {f[0], f[1], f[2], f[3]};
    }
    tr.greedy.max_outer_iters = body.value("iters", tr.greedy.max_outer_iters);
    tr.greedy.psi = body.value("psi", 0.0);
    if (tr.method == Method::VB) {
      VBHyperparams hp = active.vb ? active.vb->hyper : VBHyperparams::defaults(active.model.height());
      hp.a = body.value("a", hp.a);
      hp.b = body.value("b", hp.b);
      hp.nu = body.value("nu", hp.nu);
      if (body.contains("m0")) hp.m0 = Vector::Constant(hp.m0.size(), body["m0"].get<double>());
      tr.hyper = hp;
      tr.vb.tol = body.value("tol", prev.value("tol", tr.vb.tol));
      tr.vb.max_iters = body.value("max_iters", prev.value("max_iters", tr.vb.max_iters));
      tr.transductive = body.value("transductive", prev.value("transductive", false));
      tr.accept_unconverged = body.value("accept_unconverged", false);
    }
    return tr;
  }

  void run_worker() {
    while (true) {
      std::pair<std::size_t, TrainRequest> next;
      {
        std::unique_lock lock(jobs_mu_);
        jobs_cv_.wait(lock, [this] { return stopping_ || !pending_.empty(); });
        if (pending_.empty()) return;
        next = std::move(pending_.front());
        pending_.pop_front();
        busy_ = true;
        jobs_[next.first - 1].status = "running";
      }
      std::optional<std::size_t> version;
      std::string err;
      try {
        Snapshot snap = train(labeled_corpus(), next.second);
        version = publish(snap);
        if (!config_.snapshot_dir.empty())
          save_snapshot(snap, config_.snapshot_dir + "/model-v" + std::to_string(*version) + ".snapshot");
      } catch (const std::exception& e) {
        err = e.what();
      }
      {
        std::lock_guard lock(jobs_mu_);
        auto& j = jobs_[next.first - 1];
        j.status = err.empty() ? "done" : "failed";
        j.version = version;
        j.error = err;
        j.finished_at = utc_now();
        busy_ = false;
      }
      jobs_cv_.notify_all();
    }
  }

  const Corpus corpus_;
  const ServiceConfig config_;
  ModelRegistry registry_;

  mutable std::shared_mutex state_mu_;  // guards labels_, labeled_by_ and log_
  LabelLog log_;
  LabelMatrix labels_;
  std::vector<std::optional<std::string>> labeled_by_;

  mutable std::mutex jobs_mu_;
  std::condition_variable jobs_cv_;
  std::vector<RetrainJob> jobs_;
  std::deque<std::pair<std::size_t, TrainRequest>> pending_;
  bool busy_ = false;
  bool stopping_ = false;
  std::thread worker_;
};

}  // namespace hsim::service
