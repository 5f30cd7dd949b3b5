#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "chroma/error.hpp"
#include "chroma/tensor.hpp"

namespace chroma {

// Gradients keyed by the storage identity of the leaf tensors, so model
// parameters can be looked up across training steps (each step uses a fresh
// tape).
template <typename T>
class Gradients {
  public:
    void put(const void* key, Tensor<T> grad) { grads_[key] = std::move(grad); }

    bool contains(const Tensor<T>& t) const { return grads_.count(t.storage().get()) > 0; }

    const Tensor<T>& at(const Tensor<T>& t) const {
        auto it = grads_.find(t.storage().get());
        if (it == grads_.end()) throw ValueError("no gradient recorded for tensor");
        return it->second;
    }

    std::size_t size() const { return grads_.size(); }

  private:
    std::unordered_map<const void*, Tensor<T>> grads_;
};

// Reverse-mode tape. Records one node per primitive application; replaying
// the pullbacks in reverse tape order accumulates gradients additively across
// fan-out. A tape is confined to one logical thread; the active tape is a
// thread-local set by TapeScope.
template <typename T>
class Tape {
  public:
    // grad_out: gradient w.r.t. the node output (flat, output shape).
    // grad_in[k]: accumulation buffer for input k (empty span if untracked).
    using Pullback = std::function<void(std::span<const T>, std::span<std::span<T>>)>;

    Tape() : epoch_(next_epoch()) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape*& active() {
        thread_local Tape* current = nullptr;
        return current;
    }

    std::uint64_t epoch() const { return epoch_; }
    std::size_t size() const { return nodes_.size(); }

    // Node id for a tensor produced earlier under this tape, or a fresh leaf
    // node when the tensor asks for gradients; -1 means untracked.
    int node_of(const Tensor<T>& t) {
        if (t.node() >= 0 && t.tape_epoch() == epoch_) return t.node();
        if (!t.requires_grad()) return -1;
        const void* key = t.storage().get();
        auto it = leaves_.find(key);
        if (it != leaves_.end()) return it->second;
        const int id = add_node(t.shape(), {}, nullptr, "leaf");
        leaves_.emplace(key, id);
        leaf_keys_[id] = key;
        return id;
    }

    bool tracks(const Tensor<T>& t) {
        return (t.node() >= 0 && t.tape_epoch() == epoch_) || t.requires_grad();
    }

    int add_node(Shape out_shape, std::vector<int> input_nodes, Pullback pullback, std::string op) {
        nodes_.push_back(Node{std::move(out_shape), std::move(input_nodes), std::move(pullback), std::move(op)});
        return static_cast<int>(nodes_.size()) - 1;
    }

    // Seeds d(loss)/d(loss) = 1 and replays pullbacks in reverse order.
    Gradients<T> backward(const Tensor<T>& loss) {
        if (loss.numel() != 1) {
            throw ShapeError("backward() requires a scalar loss, shape is " + shape_str(loss.shape()));
        }
        if (loss.node() < 0 || loss.tape_epoch() != epoch_) {
            throw ValueError("loss tensor was not recorded on this tape");
        }
        std::vector<std::vector<T>> grads(nodes_.size());
        grads[static_cast<std::size_t>(loss.node())] = {T(1)};

        for (std::size_t i = nodes_.size(); i-- > 0;) {
            const Node& node = nodes_[i];
            if (!node.pullback || grads[i].empty()) continue;
            std::vector<std::span<T>> in_spans(node.inputs.size());
            for (std::size_t k = 0; k < node.inputs.size(); ++k) {
                const int in_id = node.inputs[k];
                if (in_id < 0) continue;
                auto& buf = grads[static_cast<std::size_t>(in_id)];
                if (buf.empty()) {
                    buf.assign(static_cast<std::size_t>(numel_of(nodes_[static_cast<std::size_t>(in_id)].shape)), T(0));
                }
                in_spans[k] = {buf.data(), buf.size()};
            }
            node.pullback(std::span<const T>(grads[i].data(), grads[i].size()),
                          std::span<std::span<T>>(in_spans.data(), in_spans.size()));
        }

        Gradients<T> out;
        for (const auto& [id, key] : leaf_keys_) {
            auto& buf = grads[static_cast<std::size_t>(id)];
            if (buf.empty()) buf.assign(static_cast<std::size_t>(numel_of(nodes_[static_cast<std::size_t>(id)].shape)), T(0));
            out.put(key, Tensor<T>(nodes_[static_cast<std::size_t>(id)].shape, std::move(buf)));
        }
        return out;
    }

  private:
    struct Node {
        Shape shape;
        std::vector<int> inputs;
        Pullback pullback;
        std::string op;
    };

    static std::uint64_t next_epoch() {
        static std::atomic<std::uint64_t> counter{1};
        return counter.fetch_add(1);
    }

    std::vector<Node> nodes_;
    std::unordered_map<const void*, int> leaves_;
    std::unordered_map<int, const void*> leaf_keys_;
    std::uint64_t epoch_;
};

// RAII activation of a tape on the current thread.
template <typename T>
class TapeScope {
  public:
    explicit TapeScope(Tape<T>& tape) : previous_(Tape<T>::active()) { Tape<T>::active() = &tape; }
    ~TapeScope() { Tape<T>::active() = previous_; }

    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

  private:
    Tape<T>* previous_;
};

}  // namespace chroma
