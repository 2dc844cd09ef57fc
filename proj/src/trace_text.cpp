#include "hybridwf/trace_text.hpp"

#include <cctype>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

namespace hybridwf {

ParseError::ParseError(ParseErrorKind kind, const std::string& what, int line, int col)
    : Error(kind == ParseErrorKind::DuplicatePointer ? "DuplicatePointer" : "SyntaxError",
            what + " (line " + std::to_string(line) + ", column " + std::to_string(col) + ")"),
      kind_(kind),
      line_(line),
      col_(col) {}

namespace {

// ------------------------------------------------------------------ printing

int live_branch(const Trace& t) {
    if (t.kids[0].dead) return 1;
    if (t.kids[1].dead) return 0;
    if (has_done(t.kids[0])) return 0;
    if (has_done(t.kids[1])) return 1;
    return -1;
}

std::string print_done(const Trace& t);
std::string print_active(const Trace& t);
std::string print_component(const Trace& t);

// Fully executed subtree. Fired choices keep a mark on the branch that ran so
// the branch selection survives reparsing; everything else prints plain
// because the pointer of the enclosing scope already covers it.
std::string print_done(const Trace& t) {
    switch (t.kind) {
        case TraceKind::Nil:
            return "0";
        case TraceKind::Act:
            return to_text(*t.action);
        case TraceKind::Seq: {
            std::vector<const Trace*> parts;
            display_parts(t, parts);
            std::string out;
            for (size_t i = 0; i < parts.size(); ++i) {
                if (i) out += '.';
                out += print_done(*parts[i]);
            }
            return out;
        }
        case TraceKind::Par: {
            std::vector<const Trace*> parts;
            display_parts(t, parts);
            std::string out = "(";
            for (size_t i = 0; i < parts.size(); ++i) {
                if (i) out += '|';
                out += print_done(*parts[i]);
            }
            return out + ")";
        }
        case TraceKind::Choice: {
            int live = live_branch(t);
            std::string out = "(";
            for (int i = 0; i < 2; ++i) {
                if (i) out += '+';
                out += i == live ? print_done(t.kids[i]) + "^" : plain_text(t.kids[i]);
            }
            return out + ")";
        }
    }
    return "0";
}

// Subtree holding the pointer: partially executed, or resolved but unfired.
std::string print_active(const Trace& t) {
    switch (t.kind) {
        case TraceKind::Nil:
        case TraceKind::Act:
            throw std::logic_error("print_active: atom cannot be partially executed");
        case TraceKind::Seq: {
            std::vector<const Trace*> parts;
            display_parts(t, parts);
            size_t k = 0;
            while (k < parts.size() && all_done(*parts[k])) ++k;
            if (k == parts.size()) throw std::logic_error("print_active: sequence is done");
            std::string out;
            for (size_t i = 0; i < k; ++i) out += print_done(*parts[i]) + ".";
            if (is_fresh(*parts[k])) {
                out += "^";
                for (size_t i = k; i < parts.size(); ++i) {
                    if (i > k) out += '.';
                    out += plain_text(*parts[i]);
                }
            } else {
                out += print_active(*parts[k]);
                for (size_t i = k + 1; i < parts.size(); ++i) out += "." + plain_text(*parts[i]);
            }
            return out;
        }
        case TraceKind::Par: {
            std::vector<const Trace*> parts;
            display_parts(t, parts);
            std::string out = "(";
            for (size_t i = 0; i < parts.size(); ++i) {
                if (i) out += '|';
                out += print_component(*parts[i]);
            }
            return out + ")";
        }
        case TraceKind::Choice: {
            int live = live_branch(t);
            if (live < 0) throw std::logic_error("print_active: unresolved choice is fresh");
            std::string out = "(";
            for (int i = 0; i < 2; ++i) {
                if (i) out += '+';
                out += i == live ? print_component(t.kids[i]) : plain_text(t.kids[i]);
            }
            return out + ")";
        }
    }
    throw std::logic_error("print_active: bad node kind");
}

// One independent pointer scope: the whole trace or one parallel branch.
std::string print_component(const Trace& t) {
    if (is_fresh(t)) return "^" + plain_text(t);
    if (all_done(t)) return print_done(t) + "^";
    return print_active(t);
}

// ------------------------------------------------------------------- lexing

struct Token {
    enum Kind {
        Name,
        Number,
        LParen,
        RParen,
        LBrace,
        RBrace,
        Comma,
        Dot,
        Bar,
        Plus,
        Caret,
        At,
        Hash,
        End
    };
    Kind kind = End;
    std::string text;
    long long num = 0;
    int line = 1;
    int col = 1;
};

std::vector<Token> lex(const std::string& src) {
    std::vector<Token> out;
    int line = 1, col = 1;
    size_t i = 0;
    while (i < src.size()) {
        char c = src[i];
        if (c == '\n') {
            ++line;
            col = 1;
            ++i;
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++col;
            ++i;
            continue;
        }
        int start = col;
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            size_t j = i;
            while (j < src.size() &&
                   (std::isalnum(static_cast<unsigned char>(src[j])) || src[j] == '_'))
                ++j;
            out.push_back({Token::Name, src.substr(i, j - i), 0, line, start});
            col += static_cast<int>(j - i);
            i = j;
            continue;
        }
        if (std::isdigit(static_cast<unsigned char>(c))) {
            size_t j = i;
            while (j < src.size() && std::isdigit(static_cast<unsigned char>(src[j]))) ++j;
            std::string text = src.substr(i, j - i);
            out.push_back({Token::Number, text, std::stoll(text), line, start});
            col += static_cast<int>(j - i);
            i = j;
            continue;
        }
        Token::Kind k;
        switch (c) {
            case '(': k = Token::LParen; break;
            case ')': k = Token::RParen; break;
            case '{': k = Token::LBrace; break;
            case '}': k = Token::RBrace; break;
            case ',': k = Token::Comma; break;
            case '.': k = Token::Dot; break;
            case '|': k = Token::Bar; break;
            case '+': k = Token::Plus; break;
            case '^': k = Token::Caret; break;
            case '@': k = Token::At; break;
            case '#': k = Token::Hash; break;
            default:
                throw ParseError(ParseErrorKind::Syntax,
                                 std::string("unexpected character '") + c + "'", line, col);
        }
        out.push_back({k, std::string(1, c), 0, line, start});
        ++col;
        ++i;
    }
    out.push_back({Token::End, "", 0, line, col});
    return out;
}

// ------------------------------------------------------------------ parsing

// Parse tree with pointer marks still attached. Seq nodes are n-ary and hold
// one cut flag per gap (parts.size()+1 of them); Par and Choice are binary,
// right-nested. The done/dead flags of the result are derived from the marks
// afterwards in build().
struct PNode {
    enum Kind { Nil, Act, Seq, Par, Choice } kind = Nil;
    std::optional<Action> action;
    std::vector<PNode> parts;
    std::vector<char> cuts;
    int line = 1;
    int col = 1;
};

class Parser {
public:
    explicit Parser(const std::string& src) : toks_(lex(src)) {}

    Trace trace() {
        PNode root = parse_choice();
        expect(Token::End, "end of input");
        return build(root, Ctx::Auto);
    }

    Value value() {
        Value v = parse_value_body();
        expect(Token::End, "end of input");
        return v;
    }

    FailureRef failure() {
        FailureRef f = parse_failure_body();
        expect(Token::End, "end of input");
        return f;
    }

private:
    // Done: region before the pointer. Fresh: region after it, no marks
    // allowed. Auto: marks inside decide (one component scope).
    enum class Ctx { Done, Fresh, Auto };

    std::vector<Token> toks_;
    size_t pos_ = 0;
    bool marks_allowed_ = true;

    const Token& cur() const { return toks_[pos_]; }
    const Token& peek(size_t ahead) const {
        size_t p = pos_ + ahead;
        return toks_[p < toks_.size() ? p : toks_.size() - 1];
    }
    void adv() {
        if (toks_[pos_].kind != Token::End) ++pos_;
    }

    [[noreturn]] void fail(const std::string& msg) const {
        throw ParseError(ParseErrorKind::Syntax, msg, cur().line, cur().col);
    }

    bool accept(Token::Kind k) {
        if (cur().kind != k) return false;
        adv();
        return true;
    }

    Token expect(Token::Kind k, const char* what) {
        if (cur().kind != k) fail(std::string("expected ") + what);
        Token t = cur();
        adv();
        return t;
    }

    bool accept_mark() {
        if (cur().kind != Token::Caret) return false;
        if (!marks_allowed_) fail("pointer mark inside an init payload");
        adv();
        if (cur().kind == Token::Caret)
            throw ParseError(ParseErrorKind::DuplicatePointer, "duplicate pointer mark",
                             cur().line, cur().col);
        return true;
    }

    // -------------------------------------------------------- trace grammar

    PNode parse_choice() { return parse_chain(Token::Plus, PNode::Choice); }

    PNode parse_chain(Token::Kind sep, PNode::Kind kind) {
        std::vector<PNode> branches;
        branches.push_back(sep == Token::Plus ? parse_par() : parse_seq());
        while (accept(sep)) branches.push_back(sep == Token::Plus ? parse_par() : parse_seq());
        PNode out = std::move(branches.back());
        for (size_t i = branches.size() - 1; i-- > 0;) {
            PNode n;
            n.kind = kind;
            n.line = branches[i].line;
            n.col = branches[i].col;
            n.parts.push_back(std::move(branches[i]));
            n.parts.push_back(std::move(out));
            out = std::move(n);
        }
        return out;
    }

    PNode parse_par() { return parse_chain(Token::Bar, PNode::Par); }

    PNode parse_seq() {
        PNode n;
        n.kind = PNode::Seq;
        n.line = cur().line;
        n.col = cur().col;
        n.cuts.push_back(accept_mark() ? 1 : 0);
        while (true) {
            n.parts.push_back(parse_atom());
            bool post = accept_mark();
            if (accept(Token::Dot)) {
                int mline = cur().line, mcol = cur().col;
                bool pre = accept_mark();
                if (post && pre)
                    throw ParseError(ParseErrorKind::DuplicatePointer,
                                     "duplicate pointer mark at one cut", mline, mcol);
                n.cuts.push_back(post || pre ? 1 : 0);
            } else {
                n.cuts.push_back(post ? 1 : 0);
                break;
            }
        }
        return n;
    }

    PNode parse_atom() {
        Token t = cur();
        if (t.kind == Token::LParen) {
            adv();
            PNode inner = parse_choice();
            expect(Token::RParen, "')'");
            return inner;
        }
        if (t.kind == Token::Number) {
            if (t.num != 0) fail("expected a trace atom");
            adv();
            PNode n;
            n.kind = PNode::Nil;
            n.line = t.line;
            n.col = t.col;
            return n;
        }
        if (t.kind != Token::Name) fail("expected a trace atom");
        if (t.text == "exec") return act_node(t, parse_exec());
        if (t.text == "send" || t.text == "recv") return act_node(t, parse_comm(t.text == "send"));
        if (t.text == "rec") return act_node(t, parse_rec());
        if (t.text == "init") return act_node(t, parse_init());
        if (t.text == "conf") return parse_conf();
        fail("unknown action '" + t.text + "'");
    }

    static PNode act_node(const Token& t, Action a) {
        PNode n;
        n.kind = PNode::Act;
        n.action = std::move(a);
        n.line = t.line;
        n.col = t.col;
        return n;
    }

    // ------------------------------------------------------------- actions

    Action parse_exec() {
        adv();
        expect(Token::LParen, "'('");
        StepId s = parse_step_ref();
        expect(Token::Comma, "','");
        std::set<DataId> ins = parse_data_set();
        expect(Token::Comma, "','");
        std::set<DataId> outs = parse_data_set();
        expect(Token::RParen, "')'");
        return ExecAction{std::move(s), std::move(ins), std::move(outs)};
    }

    Action parse_comm(bool is_send) {
        adv();
        expect(Token::LParen, "'('");
        Value v = parse_value_body();
        expect(Token::Comma, "','");
        LocationId l = parse_loc();
        expect(Token::RParen, "')'");
        if (is_send) return SendAction{std::move(v), std::move(l)};
        return RecvAction{std::move(v), std::move(l)};
    }

    Action parse_rec() {
        adv();
        expect(Token::LParen, "'('");
        FailureRef f = parse_failure_body();
        expect(Token::RParen, "')'");
        return RecoverAction{std::move(f)};
    }

    Action parse_init() {
        adv();
        expect(Token::LParen, "'('");
        bool saved = marks_allowed_;
        marks_allowed_ = false;
        PNode payload = parse_choice();
        marks_allowed_ = saved;
        expect(Token::Comma, "','");
        LocationId l = parse_loc();
        expect(Token::RParen, "')'");
        Trace pt = build(payload, Ctx::Fresh);
        return InitAction{std::make_shared<const Trace>(std::move(pt)), std::move(l)};
    }

    // conf(v,l[,ld]) expands to (send(ok(v),ld) + send(err(v@l),ld)).
    PNode parse_conf() {
        Token head = cur();
        adv();
        expect(Token::LParen, "'('");
        Value v = parse_value_body();
        expect(Token::Comma, "','");
        LocationId at = parse_loc();
        LocationId driver{"ld"};
        if (accept(Token::Comma)) driver = parse_loc();
        expect(Token::RParen, "')'");

        Value okv;
        FailureRef er;
        if (const auto* d = std::get_if<DataVal>(&v)) {
            okv = Value{DataAck{d->id}};
            er = FailureRef{DataNotReceived{d->id, at}};
        } else if (const auto* m = std::get_if<StepMsg>(&v)) {
            okv = Value{MsgAck{m->step}};
            er = FailureRef{MsgNotReceived{m->step, at}};
        } else {
            throw ParseError(ParseErrorKind::Syntax,
                             "conf takes a data value or a step trigger", head.line, head.col);
        }
        PNode n;
        n.kind = PNode::Choice;
        n.line = head.line;
        n.col = head.col;
        n.parts.push_back(act_node(head, SendAction{std::move(okv), driver}));
        n.parts.push_back(act_node(head, SendAction{Value{ErrVal{std::move(er)}}, driver}));
        return n;
    }

    // ------------------------------------------------------ values and ids

    // name [#n] [@n]; an '@' followed by a name is left for the caller (it
    // separates a location suffix in err(d@l) and msg(d@l)).
    void parse_indexed(std::string& name, int& scatter, int& iter) {
        Token t = expect(Token::Name, "a name");
        name = t.text;
        scatter = -1;
        iter = -1;
        if (cur().kind == Token::Hash) {
            adv();
            scatter = static_cast<int>(expect(Token::Number, "a scatter index").num);
        }
        if (cur().kind == Token::At && peek(1).kind == Token::Number) {
            adv();
            iter = static_cast<int>(expect(Token::Number, "an iteration index").num);
        }
    }

    StepId parse_step_ref() {
        StepId s;
        parse_indexed(s.name, s.scatter, s.iteration);
        return s;
    }

    DataId parse_data_ref() {
        DataId d;
        parse_indexed(d.name, d.scatter, d.iteration);
        return d;
    }

    LocationId parse_loc() { return LocationId{expect(Token::Name, "a location name").text}; }

    std::set<DataId> parse_data_set() {
        expect(Token::LBrace, "'{'");
        std::set<DataId> out;
        if (cur().kind != Token::RBrace) {
            out.insert(parse_data_ref());
            while (accept(Token::Comma)) out.insert(parse_data_ref());
        }
        expect(Token::RBrace, "'}'");
        return out;
    }

    Value parse_value_body() {
        const Token& t = cur();
        if (t.kind != Token::Name) fail("expected a value");
        if (t.text == "msg") {
            adv();
            expect(Token::LParen, "'('");
            std::string name;
            int sc, it;
            parse_indexed(name, sc, it);
            if (accept(Token::At)) {
                LocationId l = parse_loc();
                expect(Token::RParen, "')'");
                return Value{DataProducedMsg{DataId{name, sc, it}, std::move(l)}};
            }
            expect(Token::RParen, "')'");
            return Value{StepMsg{StepId{name, sc, it}}};
        }
        if (t.text == "ok") {
            adv();
            expect(Token::LParen, "'('");
            if (cur().kind == Token::Name && cur().text == "msg") {
                adv();
                expect(Token::LParen, "'('");
                StepId s = parse_step_ref();
                expect(Token::RParen, "')'");
                expect(Token::RParen, "')'");
                return Value{MsgAck{std::move(s)}};
            }
            DataId d = parse_data_ref();
            expect(Token::RParen, "')'");
            return Value{DataAck{std::move(d)}};
        }
        if (t.text == "err") {
            adv();
            expect(Token::LParen, "'('");
            FailureRef f = parse_failure_body();
            expect(Token::RParen, "')'");
            return Value{ErrVal{std::move(f)}};
        }
        return Value{DataVal{parse_data_ref()}};
    }

    FailureRef parse_failure_body() {
        const Token& t = cur();
        if (t.kind == Token::LBrace) {
            std::set<DataId> ds = parse_data_set();
            if (ds.empty()) fail("lost data set cannot be empty");
            expect(Token::At, "'@'");
            return FailureRef{DataSetLost{std::move(ds), parse_loc()}};
        }
        if (t.kind != Token::Name) fail("expected a failure reference");
        if (t.text == "x") {
            adv();
            return FailureRef{AnyFailure{}};
        }
        if (t.text == "msg") {
            adv();
            expect(Token::LParen, "'('");
            StepId s = parse_step_ref();
            expect(Token::RParen, "')'");
            expect(Token::At, "'@'");
            return FailureRef{MsgNotReceived{std::move(s), parse_loc()}};
        }
        std::string name;
        int sc, it;
        parse_indexed(name, sc, it);
        if (accept(Token::At))
            return FailureRef{DataNotReceived{DataId{name, sc, it}, parse_loc()}};
        return FailureRef{StepFailed{StepId{name, sc, it}}};
    }

    // ------------------------------------------- pointer mark reconstruction

    static bool contains_mark(const PNode& n) {
        for (char c : n.cuts)
            if (c) return true;
        for (const auto& p : n.parts)
            if (contains_mark(p)) return true;
        return false;
    }

    Trace build(const PNode& n, Ctx ctx) {
        if (ctx == Ctx::Auto && !contains_mark(n)) ctx = Ctx::Fresh;
        if (ctx == Ctx::Fresh && contains_mark(n))
            throw ParseError(ParseErrorKind::Syntax, "pointer mark beyond the execution frontier",
                             n.line, n.col);
        switch (n.kind) {
            case PNode::Nil:
                return nil_trace();
            case PNode::Act: {
                Trace a = act(*n.action);
                if (ctx == Ctx::Done) a.done = true;
                return a;
            }
            case PNode::Seq:
                return build_seq(n, ctx);
            case PNode::Par: {
                std::vector<Trace> parts;
                for (const auto& p : n.parts) {
                    if (ctx == Ctx::Auto && !contains_mark(p))
                        throw ParseError(ParseErrorKind::Syntax,
                                         "parallel branch lacks a pointer mark", p.line, p.col);
                    parts.push_back(build(p, ctx));
                }
                return par_of(std::move(parts));
            }
            case PNode::Choice:
                return build_choice(n, ctx);
        }
        return nil_trace();
    }

    Trace build_seq(const PNode& n, Ctx ctx) {
        const int k = static_cast<int>(n.parts.size());
        int cutpos = -1;
        for (int i = 0; i <= k; ++i) {
            if (!n.cuts[i]) continue;
            if (cutpos >= 0)
                throw ParseError(ParseErrorKind::DuplicatePointer,
                                 "two pointer marks in one sequence", n.line, n.col);
            cutpos = i;
        }
        int last_internal = -1;
        for (int i = 0; i < k; ++i)
            if (contains_mark(n.parts[i])) last_internal = i;

        std::vector<Trace> parts;
        if (ctx == Ctx::Done) {
            // A mark here is only consistent at the very end of the region.
            if (cutpos >= 0 && cutpos != k)
                throw ParseError(ParseErrorKind::Syntax, "pointer mark inside a completed region",
                                 n.line, n.col);
            for (const auto& p : n.parts) parts.push_back(build(p, Ctx::Done));
        } else if (ctx == Ctx::Fresh) {
            for (const auto& p : n.parts) parts.push_back(build(p, Ctx::Fresh));
        } else if (cutpos >= 0) {
            // Part i sits before the cut iff i < cutpos. Marked parts after
            // the cut would claim a second pointer.
            if (last_internal >= cutpos)
                throw ParseError(ParseErrorKind::DuplicatePointer,
                                 "pointer mark conflicts with a marked later part",
                                 n.parts[last_internal].line, n.parts[last_internal].col);
            for (int i = 0; i < k; ++i)
                parts.push_back(build(n.parts[i], i < cutpos ? Ctx::Done : Ctx::Fresh));
        } else {
            // Only internal marks: the last marked part holds the pointer.
            for (int i = 0; i < k; ++i) {
                Ctx sub = i < last_internal ? Ctx::Done
                          : i == last_internal ? Ctx::Auto
                                               : Ctx::Fresh;
                parts.push_back(build(n.parts[i], sub));
            }
        }
        return seq_of(std::move(parts));
    }

    Trace build_choice(const PNode& n, Ctx ctx) {
        const PNode& a = n.parts[0];
        const PNode& b = n.parts[1];
        bool ma = contains_mark(a), mb = contains_mark(b);
        if (ctx == Ctx::Fresh || (ctx == Ctx::Auto && !ma && !mb))
            return choice(build(a, Ctx::Fresh), build(b, Ctx::Fresh));
        if (ctx == Ctx::Done) {
            if (ma && mb)
                throw ParseError(ParseErrorKind::DuplicatePointer,
                                 "both branches of a fired choice are marked", n.line, n.col);
            if (!ma && !mb)
                throw ParseError(ParseErrorKind::Syntax,
                                 "fired choice needs a mark on the branch that ran", n.line,
                                 n.col);
        }
        if (ma && mb) {
            // Both marked is only meaningful for an unresolved choice whose
            // branches are all fresh, e.g. "(^a+^b)".
            Trace ta = build(a, Ctx::Auto);
            Trace tb = build(b, Ctx::Auto);
            if (!is_fresh(ta) || !is_fresh(tb))
                throw ParseError(ParseErrorKind::DuplicatePointer,
                                 "both branches of one choice are marked", n.line, n.col);
            return choice(std::move(ta), std::move(tb));
        }
        const PNode& live = ma ? a : b;
        const PNode& dead = ma ? b : a;
        Trace tl = build(live, ctx == Ctx::Done ? Ctx::Done : Ctx::Auto);
        Trace td = build(dead, Ctx::Fresh);
        td.dead = true;
        Trace out = ma ? choice(std::move(tl), std::move(td))
                       : choice(std::move(td), std::move(tl));
        return out;
    }
};

}  // namespace

std::string marked_text(const Trace& t) { return print_component(t); }

std::string print_trace(const Trace& t) { return marked_text(normalize(t)); }

Trace parse_trace(const std::string& text) { return Parser(text).trace(); }

Value parse_value(const std::string& text) { return Parser(text).value(); }

FailureRef parse_failure(const std::string& text) { return Parser(text).failure(); }

}  // namespace hybridwf
