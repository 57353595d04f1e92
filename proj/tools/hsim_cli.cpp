#include <csignal>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hsim.hpp"
#include "hsim/service.hpp"

namespace {

using namespace hsim;

std::unordered_set<std::string> read_word_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open word list " + path);
  std::unordered_set<std::string> out;
  std::string w;
  while (in >> w) out.insert(w);
  return out;
}

SplitFractions parse_fractions(const std::vector<double>& f) {
  if (f.size() != 4) throw Error("--fractions needs four values: v0 v1 v2 test");
  return {f[0], f[1], f[2], f[3]};
}

Corpus load_corpus_checked(const std::string& path, const std::string& tree_path) {
  Corpus c = load_corpus_file(path);
  if (!tree_path.empty() && load_hierarchy_file(tree_path).to_json() != c.tree().to_json())
    throw Error("--tree does not match the tree stored in the corpus");
  return c;
}

httplib::Server* g_server = nullptr;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical similarity ranking of documents against a topic tree"};
  app.require_subcommand(1);

  // build-corpus
  auto* bc = app.add_subcommand("build-corpus", "Tokenize documents and write a vectorized corpus");
  std::string bc_docs, bc_tree, bc_out, bc_stop;
  std::size_t bc_min_df = 2, bc_min_len = 2;
  double bc_max_df = 0.5;
  bc->add_option("--docs", bc_docs, "JSONL documents {id, text, leaf?}")->required();
  bc->add_option("--tree", bc_tree, "Topic tree JSON")->required();
  bc->add_option("--min-df", bc_min_df, "Minimum document frequency")->capture_default_str();
  bc->add_option("--max-df-ratio", bc_max_df, "Maximum document frequency ratio")->capture_default_str();
  bc->add_option("--min-len", bc_min_len, "Minimum word length")->capture_default_str();
  bc->add_option("--stopwords", bc_stop, "Whitespace-separated stopword file");
  bc->add_option("--out", bc_out, "Output corpus JSON")->required();

  // synth
  auto* sy = app.add_subcommand("synth", "Generate a planted three-level corpus");
  synthetic::Config sc;
  std::string sy_docs, sy_tree;
  double sy_unlabeled = 0.0;
  sy->add_option("--seed", sc.seed)->capture_default_str();
  sy->add_option("--level2", sc.level2)->capture_default_str();
  sy->add_option("--leaves-per-level2", sc.leaves_per_level2)->capture_default_str();
  sy->add_option("--docs-per-leaf", sc.docs_per_leaf)->capture_default_str();
  sy->add_option("--unlabeled", sy_unlabeled, "Fraction of documents written without a leaf")->capture_default_str();
  sy->add_option("--out-docs", sy_docs, "JSONL documents")->required();
  sy->add_option("--out-tree", sy_tree, "Topic tree JSON")->required();

  // train
  auto* tr = app.add_subcommand("train", "Fit a model and write a snapshot");
  std::string tr_method = "greedy", tr_corpus, tr_tree, tr_grid, tr_out, tr_unlabeled, tr_wishart = "standard";
  std::vector<double> tr_fractions{0.25, 0.25, 0.25, 0.25};
  std::uint64_t tr_seed = 1;
  double tr_psi = 0.0;
  std::size_t tr_iters = 10;
  double tr_a = 0, tr_b = 0, tr_nu = 0, tr_m0 = 0, tr_tol = 1e-5;
  std::size_t tr_max_iters = 200;
  bool tr_transductive = false, tr_accept = false;
  tr->add_option("--method", tr_method, "greedy, vb or baseline")
      ->check(CLI::IsMember({"greedy", "vb", "baseline"}))
      ->capture_default_str();
  tr->add_option("--corpus", tr_corpus, "Corpus JSON")->required();
  tr->add_option("--tree", tr_tree, "Topic tree JSON; must match the corpus");
  tr->add_option("--seed", tr_seed, "Split seed")->capture_default_str();
  tr->add_option("--fractions", tr_fractions, "Split fractions v0 v1 v2 test")->expected(4);
  tr->add_option("--grid", tr_grid, "Alpha grid, e.g. \"-0.5,0,0.5\" or one group per level separated by ';'");
  tr->add_option("--psi", tr_psi, "Branch weight penalty; 0 selects the default");
  tr->add_option("--iters", tr_iters, "Greedy outer iterations")->capture_default_str();
  tr->add_option("--unlabeled", tr_unlabeled, "JSONL of extra unlabeled documents (vb)");
  tr->add_option("--a", tr_a, "Precision of q(alpha) prior (vb)");
  tr->add_option("--b", tr_b, "Scale of the m prior (vb)");
  tr->add_option("--nu", tr_nu, "Wishart degrees of freedom (vb)");
  tr->add_option("--m0", tr_m0, "Prior mean of every branch weight (vb)");
  tr->add_option("--tol", tr_tol, "Convergence tolerance (vb)")->capture_default_str();
  tr->add_option("--max-iters", tr_max_iters, "EM iteration limit (vb)")->capture_default_str();
  tr->add_option("--wishart", tr_wishart, "W_k update: standard or literal")
      ->check(CLI::IsMember({"standard", "literal"}))
      ->capture_default_str();
  tr->add_flag("--transductive", tr_transductive, "Use test documents as unlabeled data (vb)");
  tr->add_flag("--accept-unconverged", tr_accept, "Write the last state when EM does not converge");
  tr->add_option("--out", tr_out, "Output snapshot")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a snapshot on a split");
  std::string ev_model, ev_corpus, ev_split = "test", ev_report, ev_format = "csv", ev_ranker = "hsim";
  ev->add_option("--model", ev_model, "Snapshot")->required();
  ev->add_option("--corpus", ev_corpus, "Corpus JSON")->required();
  ev->add_option("--split", ev_split, "test, v0, v1, v2, training or all")
      ->check(CLI::IsMember({"test", "v0", "v1", "v2", "training", "all"}))
      ->capture_default_str();
  ev->add_option("--ranker", ev_ranker, "hsim, flat or topdown")
      ->check(CLI::IsMember({"hsim", "flat", "topdown"}))
      ->capture_default_str();
  ev->add_option("--format", ev_format, "csv or json")->check(CLI::IsMember({"csv", "json"}))->capture_default_str();
  ev->add_option("--report", ev_report, "Report path");

  // rank
  auto* rk = app.add_subcommand("rank", "Rank the leaves for a text");
  std::string rk_model, rk_text;
  std::size_t rk_top = 5;
  rk->add_option("--model", rk_model, "Snapshot")->required();
  rk->add_option("--text", rk_text, "Document text")->required();
  rk->add_option("--top", rk_top, "Rows to print")->capture_default_str();

  // serve
  auto* sv = app.add_subcommand("serve", "Run the HTTP service");
  std::string sv_model, sv_corpus, sv_log = "labels.jsonl", sv_host = "127.0.0.1", sv_snapdir, sv_static;
  int sv_port = 8080;
  sv->add_option("--model", sv_model, "Initial snapshot")->required();
  sv->add_option("--corpus", sv_corpus, "Corpus JSON")->required();
  sv->add_option("--port", sv_port)->capture_default_str();
  sv->add_option("--host", sv_host)->capture_default_str();
  sv->add_option("--log", sv_log, "Label log (JSONL, append-only)")->capture_default_str();
  sv->add_option("--snapshot-dir", sv_snapdir, "Directory for retrained snapshots");
  sv->add_option("--static", sv_static, "Directory of browser assets served at /");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*bc) {
      CorpusConfig cfg;
      cfg.min_df = bc_min_df;
      cfg.max_df_ratio = bc_max_df;
      cfg.tokenizer.min_len = bc_min_len;
      if (!bc_stop.empty()) cfg.tokenizer.stopwords = read_word_list(bc_stop);
      const Corpus c = build_corpus(read_documents_jsonl(bc_docs), load_hierarchy_file(bc_tree), cfg);
      save_corpus_file(c, bc_out);
      std::cout << "documents " << c.size() << ", dictionary " << c.dictionary().size() << ", leaves "
                << c.tree().leaf_count() << ", labeled " << c.labeled_indices().size() << '\n';
    } else if (*sy) {
      auto col = synthetic::generate(sc);
      std::mt19937_64 rng(sc.seed ^ 0x5eedULL);
      for (auto& d : col.documents)
        if (sy_unlabeled > 0.0 && static_cast<double>(rng() >> 11) * 0x1.0p-53 < sy_unlabeled) d.leaf.reset();
      std::ofstream docs(sy_docs), tree(sy_tree);
      if (!docs || !tree) throw IoFailure("cannot write synthetic output");
      write_documents_jsonl(docs, col.documents);
      tree << col.tree.dump(2) << '\n';
      std::cout << "documents " << col.documents.size() << '\n';
    } else if (*tr) {
      const Corpus c = load_corpus_checked(tr_corpus, tr_tree);
      TrainRequest req;
      req.method = parse_method(tr_method);
      req.seed = tr_seed;
      req.fractions = parse_fractions(tr_fractions);
      req.greedy.max_outer_iters = tr_iters;
      req.greedy.psi = tr_psi;
      if (!tr_grid.empty()) req.greedy.alpha_grid = parse_alpha_grid(tr_grid, c.tree());
      auto hp = VBHyperparams::defaults(c.tree().height());
      if (tr_a > 0) hp.a = tr_a;
      if (tr_b > 0) hp.b = tr_b;
      if (tr_nu > 0) hp.nu = tr_nu;
      if (tr_m0 != 0) hp.m0.setConstant(tr_m0);
      req.hyper = hp;
      req.vb.tol = tr_tol;
      req.vb.max_iters = tr_max_iters;
      req.vb.variant = parse_wishart_variant(tr_wishart);
      req.transductive = tr_transductive;
      req.accept_unconverged = tr_accept;
      if (!tr_unlabeled.empty())
        for (const auto& d : read_documents_jsonl(tr_unlabeled))
          req.unlabeled.push_back(vectorize_text(d.text, c.dictionary()));
      const Snapshot snap = train(c, req);
      save_snapshot(snap, tr_out);
      std::cout << "method " << snap.method;
      if (snap.metrics.contains("test_auch")) std::cout << ", test AUCH " << snap.metrics["test_auch"].get<double>();
      if (snap.vb) std::cout << ", EM iterations " << snap.vb->iterations;
      std::cout << '\n';
    } else if (*ev) {
      const Snapshot snap = load_snapshot(ev_model);
      const Corpus c = load_corpus_file(ev_corpus);
      std::vector<std::string> ids;
      if (ev_split == "all") {
        for (auto n : c.labeled_indices()) ids.push_back(c.document(n).id);
      } else {
        if (!snap.partition) throw Error("snapshot has no partition; use --split all");
        const auto& p = *snap.partition;
        ids = ev_split == "test"       ? p.test
              : ev_split == "v0"       ? p.v0
              : ev_split == "v1"       ? p.v1
              : ev_split == "v2"       ? p.v2
                                       : p.training();
      }
      std::vector<std::size_t> idx;
      for (const auto& id : ids)
        if (auto n = c.find(id); n && c.labels().leaf(*n)) idx.push_back(*n);
      if (idx.empty()) throw InsufficientData("no labeled documents in the selected split");
      const auto& m = snap.model;
      auto ranker = [&](const SparseVector& x) {
        const auto y = remap(x, c.dictionary(), m.dictionary);
        if (ev_ranker == "flat") return rank_leaves_flat(y, m);
        if (ev_ranker == "topdown") return rank_leaves_topdown(y, m);
        return rank_leaves_hsim(y, m);
      };
      const EvalReport rep = evaluate(ranker, c, idx);
      if (!ev_report.empty()) emit_report(rep, ev_format == "csv" ? ReportFormat::Csv : ReportFormat::Json, ev_report);
      std::cout << "documents " << idx.size() << ", AUCH " << rep.auch;
      for (const auto& [k, v] : rep.dcg) std::cout << ", DCG@" << k << ' ' << v;
      std::cout << '\n';
    } else if (*rk) {
      const Snapshot snap = load_snapshot(rk_model);
      const auto r = rank_snapshot(snap, vectorize_text(rk_text, snap.model.dictionary));
      if (r.degenerate) std::cout << "warning: no dictionary words; leaves in index order\n";
      const auto& tree = snap.model.tree;
      for (std::size_t i = 0; i < std::min(rk_top, r.ranked.order.size()); ++i) {
        const auto k = r.ranked.order[i];
        std::string path;
        for (const auto& n : tree.branch_names(k)) path += (path.empty() ? "" : "/") + n;
        std::cout << i + 1 << '\t' << r.ranked.scores[i];
        if (r.probability) std::cout << '\t' << (*r.probability)[static_cast<Eigen::Index>(k)];
        std::cout << '\t' << path << '\n';
      }
    } else if (*sv) {
      service::ServiceConfig cfg;
      cfg.label_log = sv_log;
      cfg.snapshot_dir = sv_snapdir;
      service::Service svc(load_corpus_file(sv_corpus), cfg);
      svc.publish(load_snapshot(sv_model));
      httplib::Server server;
      svc.mount(server);
      if (!sv_static.empty() && !server.set_mount_point("/", sv_static))
        throw IoFailure("cannot serve static directory " + sv_static);
      g_server = &server;
      std::signal(SIGINT, [](int) {
        if (g_server) g_server->stop();
      });
      std::signal(SIGTERM, [](int) {
        if (g_server) g_server->stop();
      });
      std::cout << "listening on " << sv_host << ':' << sv_port << std::endl;
      if (!server.listen(sv_host, sv_port)) throw IoFailure("cannot listen on port " + std::to_string(sv_port));
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
