#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rgsan/autodiff.hpp"
#include "rgsan/json_io.hpp"
#include "rgsan/matrix.hpp"

namespace rgsan {

inline constexpr std::size_t kDefaultMaxTokens = 80;

/// Lowercase + whitespace split, punctuation peeled into its own tokens,
/// truncated to max_len.
inline std::vector<std::string> tokenize(const std::string& expression,
                                         std::size_t max_len = kDefaultMaxTokens) {
    std::vector<std::string> tokens;
    std::string current;
    auto flush = [&] {
        if (!current.empty()) {
            tokens.push_back(current);
            current.clear();
        }
    };
    for (char raw : expression) {
        const unsigned char ch = static_cast<unsigned char>(raw);
        if (std::isspace(ch)) {
            flush();
        } else if (std::ispunct(ch)) {
            flush();
            tokens.push_back(std::string(1, static_cast<char>(std::tolower(ch))));
        } else {
            current.push_back(static_cast<char>(std::tolower(ch)));
        }
    }
    flush();
    if (tokens.empty()) throw std::invalid_argument("expression has no tokens");
    if (tokens.size() > max_len) tokens.resize(max_len);
    return tokens;
}

struct DepEdge {
    std::string relation;
    int head = -1;  // governor
    int tail = -1;  // dependent
};

struct DependencyTree {
    std::vector<std::string> tokens;
    std::vector<DepEdge> edges;
    int root = 0;

    /// Tree-shape validation: indices in range, one head per non-root node,
    /// a single root, everything reachable from it.
    void validate() const {
        const int n = static_cast<int>(tokens.size());
        if (n < 1) throw SchemaError("tree has no tokens");
        for (const auto& tok : tokens)
            if (tok.empty()) throw SchemaError("tree has an empty token");
        std::vector<int> head_count(n, 0);
        for (std::size_t e = 0; e < edges.size(); ++e) {
            const auto& edge = edges[e];
            const std::string where = "edge " + std::to_string(e);
            if (edge.head < 0 || edge.head >= n) throw SchemaError(where + ": head out of range");
            if (edge.tail < 0 || edge.tail >= n) throw SchemaError(where + ": tail out of range");
            if (edge.head == edge.tail) throw SchemaError(where + ": head equals tail");
            ++head_count[edge.tail];
        }
        int inferred_root = -1;
        for (int i = 0; i < n; ++i) {
            if (head_count[i] > 1) throw SchemaError("token " + std::to_string(i) + " has multiple heads");
            if (head_count[i] == 0) {
                if (inferred_root >= 0) throw SchemaError("multiple roots (tokens " +
                                                          std::to_string(inferred_root) + " and " +
                                                          std::to_string(i) + ")");
                inferred_root = i;
            }
        }
        if (inferred_root < 0) throw SchemaError("cycle: no root candidate");
        if (root != inferred_root)
            throw SchemaError("declared root " + std::to_string(root) +
                              " differs from inferred root " + std::to_string(inferred_root));
        // Reachability from root rules out disconnected cycles.
        std::vector<char> seen(n, 0);
        std::vector<int> stack{root};
        seen[root] = 1;
        while (!stack.empty()) {
            const int cur = stack.back();
            stack.pop_back();
            for (const auto& e : edges)
                if (e.head == cur && !seen[e.tail]) {
                    seen[e.tail] = 1;
                    stack.push_back(e.tail);
                }
        }
        for (int i = 0; i < n; ++i)
            if (!seen[i]) throw SchemaError("cycle: token " + std::to_string(i) + " unreachable from root");
    }
};

inline json tree_to_json(const DependencyTree& tree) {
    json j;
    j["tokens"] = tree.tokens;
    json edges = json::array();
    for (const auto& e : tree.edges)
        edges.push_back({{"relation", e.relation}, {"head", e.head}, {"tail", e.tail}});
    j["edges"] = std::move(edges);
    j["root"] = tree.root;
    return j;
}

inline DependencyTree tree_from_json(const json& j, const std::string& where = "tree") {
    DependencyTree tree;
    tree.tokens = require_field(j, "tokens", where).get<std::vector<std::string>>();
    for (const auto& ej : require_field(j, "edges", where)) {
        DepEdge e;
        e.relation = require_field(ej, "relation", where + " edge").get<std::string>();
        e.head = require_field(ej, "head", where + " edge").get<int>();
        e.tail = require_field(ej, "tail", where + " edge").get<int>();
        tree.edges.push_back(std::move(e));
    }
    if (j.contains("root")) {
        tree.root = j["root"].get<int>();
    } else {
        // Infer: the unique node that is never a tail.
        std::set<int> tails;
        for (const auto& e : tree.edges) tails.insert(e.tail);
        tree.root = -1;
        for (int i = 0; i < static_cast<int>(tree.tokens.size()); ++i)
            if (!tails.count(i)) {
                if (tree.root >= 0) throw SchemaError(where + ": multiple roots");
                tree.root = i;
            }
        if (tree.root < 0) throw SchemaError(where + ": cycle: no root candidate");
    }
    try {
        tree.validate();
    } catch (const SchemaError& e) {
        throw SchemaError(where + ": " + e.what());
    }
    return tree;
}

inline DependencyTree load_dependency_tree(const std::string& path) {
    return tree_from_json(load_json_file(path), path);
}

inline void save_dependency_tree(const DependencyTree& tree, const std::string& path) {
    save_json_file(path, tree_to_json(tree), 1);
}

struct Vocabulary {
    std::vector<std::string> words;
    std::unordered_map<std::string, int> index;

    static Vocabulary from_words(std::vector<std::string> words) {
        Vocabulary v;
        v.words = std::move(words);
        for (std::size_t i = 0; i < v.words.size(); ++i) v.index.emplace(v.words[i], static_cast<int>(i));
        return v;
    }

    int size() const { return static_cast<int>(words.size()); }
    int oov_id() const { return size(); }
    int rows() const { return size() + 1; }  // one shared out-of-vocabulary slot

    int id_of(const std::string& token) const {
        auto it = index.find(token);
        return it == index.end() ? oov_id() : it->second;
    }

    std::vector<int> ids_of(const std::vector<std::string>& tokens) const {
        std::vector<int> ids;
        ids.reserve(tokens.size());
        for (const auto& t : tokens) ids.push_back(id_of(t));
        return ids;
    }

    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot write " + path);
        for (const auto& w : words) out << w << '\n';
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open " + path);
        std::vector<std::string> words;
        std::string line;
        while (std::getline(in, line))
            if (!line.empty()) words.push_back(line);
        return from_words(std::move(words));
    }
};

/// Embedding lookup; out-of-vocabulary tokens share the table's last row.
template <typename Real>
Var<Real> embed_tokens(Tape<Real>& tape, Var<Real> table, const Vocabulary& vocab,
                       const std::vector<std::string>& tokens) {
    if (table.rows() != static_cast<std::size_t>(vocab.rows()))
        throw std::invalid_argument("embedding table rows do not match vocabulary");
    return tape.gather_rows(table, vocab.ids_of(tokens));
}

/// Attention mask over token pairs: 0 where attending is allowed (dependency
/// neighbours either direction, plus self), -1e9 elsewhere.
template <typename Real>
Matrix<Real> dependency_attention_mask(const DependencyTree& tree) {
    const std::size_t n = tree.tokens.size();
    Matrix<Real> mask(n, n, Real(-1e9));
    for (std::size_t i = 0; i < n; ++i) mask(i, i) = Real(0);
    for (const auto& e : tree.edges) {
        mask(e.head, e.tail) = Real(0);
        mask(e.tail, e.head) = Real(0);
    }
    return mask;
}

template <typename Real>
struct DdiParams {
    Var<Real> W_q, W_k, W_v, W_o;  // all D x D; W_o zero-init gives a residual pass-through
};

template <typename Real>
struct ProjectionParams {
    Var<Real> W_lang;  // C_t x D
    Var<Real> W_vis;   // C_p x D
    DdiParams<Real> ddi;
};

/// Projects both modalities to width D and runs one dependency-masked
/// residual self-attention block over the text side.
template <typename Real>
std::pair<Var<Real>, Var<Real>> project_and_ddi(Tape<Real>& tape, Var<Real> E0, Var<Real> S_p,
                                                const ProjectionParams<Real>& params,
                                                const Matrix<Real>& tree_mask) {
    if (E0.cols() != params.W_lang.rows()) throw std::invalid_argument("project_and_ddi: E0/W_lang mismatch");
    if (S_p.cols() != params.W_vis.rows()) throw std::invalid_argument("project_and_ddi: S_p/W_vis mismatch");
    if (tree_mask.rows() != E0.rows() || tree_mask.cols() != E0.rows())
        throw std::invalid_argument("project_and_ddi: mask must be N_t x N_t");

    auto S_hat = tape.matmul(S_p, params.W_vis);
    auto X = tape.matmul(E0, params.W_lang);

    const Real inv_sqrt_d = Real(1) / std::sqrt(static_cast<Real>(params.W_lang.cols()));
    auto q = tape.matmul(X, params.ddi.W_q);
    auto k = tape.matmul(X, params.ddi.W_k);
    auto v = tape.matmul(X, params.ddi.W_v);
    auto logits = tape.add(tape.scale(tape.matmul(q, tape.transpose(k)), inv_sqrt_d),
                           tape.constant(tree_mask));
    auto attended = tape.matmul(tape.softmax_rows(logits), v);
    auto E_hat = tape.add(X, tape.matmul(attended, params.ddi.W_o));
    return {E_hat, S_hat};
}

}  // namespace rgsan
