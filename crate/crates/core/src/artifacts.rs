//! Structure of the analyzed binary and the symbol indices derived from it.
//!
//! Artifact maps are imported from a neutral interchange file written by
//! small exporter scripts inside each disassembler. From the map we derive
//! sanitized symbol→function and symbol→block lookups, and a time-indexed
//! view that follows the renames performed during a session.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::session::Timestamp;

/// Symbols shorter than this (after sanitization) are never indexed.
pub const MIN_SYMBOL_LEN: usize = 2;

/// Address serialized as a `0x`-prefixed hex string.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Addr(pub u64);

impl fmt::Debug for Addr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}", self.0)
    }
}

impl fmt::Display for Addr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}", self.0)
    }
}

impl std::str::FromStr for Addr {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let digits = s
            .strip_prefix("0x")
            .or_else(|| s.strip_prefix("0X"))
            .ok_or_else(|| format!("address {s:?} lacks 0x prefix"))?;
        u64::from_str_radix(digits, 16)
            .map(Addr)
            .map_err(|_| format!("address {s:?} is not hexadecimal"))
    }
}

impl Serialize for Addr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Addr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockRecord {
    #[serde(rename = "addr")]
    pub address: Addr,
    /// Disassembly lines as the tool renders them.
    #[serde(rename = "lines")]
    pub text_lines: Vec<String>,
}

impl BlockRecord {
    pub fn text(&self) -> String {
        self.text_lines.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionRecord {
    #[serde(rename = "entry")]
    pub entry_address: Addr,
    pub name: String,
    pub blocks: Vec<BlockRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalRecord {
    #[serde(rename = "addr")]
    pub address: Addr,
    pub name: String,
    #[serde(rename = "type")]
    pub type_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StringRecord {
    #[serde(rename = "addr")]
    pub address: Addr,
    pub literal: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum XrefKind {
    Call,
    Data,
    String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Xref {
    #[serde(rename = "from")]
    pub from_address: Addr,
    #[serde(rename = "to")]
    pub to_address: Addr,
    pub kind: XrefKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryArtifactMap {
    pub binary_id: String,
    pub functions: Vec<FunctionRecord>,
    #[serde(default)]
    pub globals: Vec<GlobalRecord>,
    #[serde(default)]
    pub strings: Vec<StringRecord>,
    #[serde(default)]
    pub xrefs: Vec<Xref>,
}

impl BinaryArtifactMap {
    pub fn from_json(text: &str) -> Result<Self> {
        let map: BinaryArtifactMap = serde_json::from_str(text).map_err(|e| Error::schema("artifact map", e.to_string()))?;
        map.validated()
    }

    /// Reads and validates an interchange file.
    pub fn import(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::SchemaViolation { message, .. } => Error::schema(path.display().to_string(), message),
            other => other,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    fn validated(mut self) -> Result<Self> {
        let mut known = BTreeSet::new();
        let mut entries = BTreeSet::new();
        let mut blocks = BTreeSet::new();
        for f in &mut self.functions {
            if f.name.trim().is_empty() {
                return Err(Error::schema("artifact map", format!("function {} has an empty name", f.entry_address)));
            }
            if !entries.insert(f.entry_address) {
                return Err(Error::DuplicateAddress(f.entry_address.0));
            }
            f.blocks.sort_by_key(|b| b.address);
            for b in &f.blocks {
                if b.text_lines.is_empty() {
                    return Err(Error::schema("artifact map", format!("block {} has no lines", b.address)));
                }
                if !blocks.insert(b.address) {
                    return Err(Error::DuplicateAddress(b.address.0));
                }
            }
            known.insert(f.entry_address);
        }
        known.extend(blocks);
        for g in &self.globals {
            known.insert(g.address);
        }
        for s in &self.strings {
            known.insert(s.address);
        }
        for x in &self.xrefs {
            for a in [x.from_address, x.to_address] {
                if !known.contains(&a) {
                    return Err(Error::DanglingXref(a.0));
                }
            }
        }
        Ok(self)
    }

    pub fn function(&self, entry: Addr) -> Option<&FunctionRecord> {
        self.functions.iter().find(|f| f.entry_address == entry)
    }

    /// Function entry addresses in ascending order; ordinals are 1-based ranks in this list.
    pub fn function_order(&self) -> Vec<Addr> {
        let mut v: Vec<Addr> = self.functions.iter().map(|f| f.entry_address).collect();
        v.sort();
        v
    }

    /// Whether `addr` is the target or source of a cross-reference.
    pub fn is_xref_endpoint(&self, addr: Addr) -> bool {
        self.xrefs.iter().any(|x| x.from_address == addr || x.to_address == addr)
    }
}

const TOOL_PREFIXES: &[&str] = &[
    "fun_", "dat_", "lab_", "sub_", "loc_", "off_", "unk_", "byte_", "word_", "dword_", "qword_",
];

fn is_trim_char(c: char) -> bool {
    c.is_ascii_punctuation() || c.is_whitespace()
}

/// Canonical form of a displayed symbol: lowercased, tool prefixes removed,
/// surrounding punctuation trimmed and whitespace collapsed. Idempotent.
pub fn sanitize_symbol(raw: &str) -> String {
    let mut s = raw.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ");
    loop {
        let before = s.len();
        s = s.trim_matches(is_trim_char).to_string();
        if let Some(rest) = TOOL_PREFIXES.iter().find_map(|p| s.strip_prefix(p)) {
            s = rest.to_string();
        }
        if s.len() == before {
            return s;
        }
    }
}

pub(crate) fn is_symbol_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '_' | '.' | '@' | '$' | '?')
}

/// Splits rendered text into sanitized symbols, dropping empties and
/// anything shorter than [`MIN_SYMBOL_LEN`].
pub fn symbols_in(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !is_symbol_char(c))
        .filter(|s| !s.is_empty())
        .map(sanitize_symbol)
        .filter(|s| s.chars().count() >= MIN_SYMBOL_LEN)
}

const DEFAULT_STOPLIST: &str = "
add adc sub sbb mul imul div idiv inc dec neg not and or xor shl shr sal sar rol ror rcl rcr
mov movzx movsx movsxd movabs lea push pop call ret retn leave enter nop hlt int int3 syscall
cmp test jmp je jne jz jnz jg jge jl jle ja jae jb jbe js jns jo jno jp jnp jcxz jecxz
sete setne setz setnz setg setl seta setb cmove cmovne cmovz cmovnz cmovg cmovl cmova cmovb
cdq cdqe cqo cwd cbw xchg bswap bt bts btr lock rep repe repne stos stosb stosd movs movsb movsd
pxor movaps movups movdqa movdqu movq movd cvtsi2sd cvttsd2si addsd subsd mulsd divsd ucomisd
endbr64 endbr32
ldr ldrb ldrh str strb strh ldp stp b bl blx bx cbz cbnz adr adrp mvn orr eor lsl lsr asr
beq bne bgt blt bge ble bhi bls subs adds cmn tst movk movz ret
rax rbx rcx rdx rsi rdi rbp rsp rip r8 r9 r10 r11 r12 r13 r14 r15
eax ebx ecx edx esi edi ebp esp eip r8d r9d r10d r11d r12d r13d r14d r15d
ax bx cx dx si di bp sp al ah bl bh cl ch dl dh sil dil bpl spl
xmm0 xmm1 xmm2 xmm3 xmm4 xmm5 xmm6 xmm7 cs ds es fs gs ss
x0 x1 x2 x3 x4 x5 x6 x7 x8 x9 x10 x16 x17 x29 x30 w0 w1 w2 w3 w4 w5 w6 w7 w8 w9 lr pc fp xzr wzr
ptr byte word dword qword xmmword offset short near far
db dw dd dq align section segment public extern proc endp assume org
undefined undefined1 undefined2 undefined4 undefined8 void int long char bool uint ulong
";

/// Non-discriminative symbols excluded from the indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stoplist {
    words: BTreeSet<String>,
}

impl Default for Stoplist {
    /// x86/ARM mnemonics, registers, operand size keywords and common directives.
    fn default() -> Self {
        Stoplist::from_words(DEFAULT_STOPLIST.split_whitespace())
    }
}

impl Stoplist {
    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        Stoplist {
            words: words
                .into_iter()
                .map(sanitize_symbol)
                .filter(|w| !w.is_empty())
                .collect(),
        }
    }

    pub fn empty() -> Self {
        Stoplist { words: BTreeSet::new() }
    }

    /// One word per line; `#` starts a comment.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Stoplist::from_words(
            text.lines().map(|l| l.split('#').next().unwrap_or("")).flat_map(str::split_whitespace),
        ))
    }

    pub fn contains(&self, sanitized: &str) -> bool {
        self.words.contains(sanitized)
    }

    pub fn fingerprint(&self) -> String {
        let joined: Vec<&str> = self.words.iter().map(String::as_str).collect();
        crate::sha256_hex(joined.join("\n").as_bytes())
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(String::as_str)
    }
}

/// A named artifact a rename can target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NamedArtifact {
    Function(Addr),
    Global(Addr),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum RenameScope {
    Function,
    Global,
    Local { function: Addr },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenameEvent {
    pub t: Timestamp,
    pub scope: RenameScope,
    pub old_name: String,
    pub new_name: String,
}

type Site = (Addr, Addr);

/// Sanitized symbol lookups for one point in a session.
///
/// Occurrences of every symbol are retained so renames can move them;
/// the public maps only hold symbols that are discriminative, i.e. occur in
/// exactly one function (resp. block) and are not stoplisted.
#[derive(Debug, Clone)]
pub struct SymbolIndex {
    occurrences: BTreeMap<String, BTreeSet<Site>>,
    names: BTreeMap<String, NamedArtifact>,
    display: BTreeMap<NamedArtifact, String>,
    symbol_to_function: BTreeMap<String, Addr>,
    symbol_to_block: BTreeMap<String, Site>,
    buckets: HashMap<(char, usize), Vec<String>>,
    stoplist: Arc<Stoplist>,
    stoplist_fingerprint: String,
}

impl SymbolIndex {
    /// Builds the index of `map`, excluding `stoplist` members and symbols shared by several functions.
    pub fn build(map: &BinaryArtifactMap, stoplist: &Stoplist) -> Self {
        let mut occurrences: BTreeMap<String, BTreeSet<Site>> = BTreeMap::new();
        let mut names = BTreeMap::new();
        let mut display = BTreeMap::new();
        for f in &map.functions {
            let entry = f.entry_address;
            let first_block = f.blocks.first().map_or(entry, |b| b.address);
            for sym in symbols_in(&f.name) {
                occurrences.entry(sym).or_default().insert((entry, first_block));
            }
            for b in &f.blocks {
                for line in &b.text_lines {
                    for sym in symbols_in(line) {
                        occurrences.entry(sym).or_default().insert((entry, b.address));
                    }
                }
            }
            let artifact = NamedArtifact::Function(entry);
            names.entry(sanitize_symbol(&f.name)).or_insert(artifact);
            display.insert(artifact, f.name.clone());
        }
        for g in &map.globals {
            let artifact = NamedArtifact::Global(g.address);
            names.entry(sanitize_symbol(&g.name)).or_insert(artifact);
            display.insert(artifact, g.name.clone());
        }
        let mut index = SymbolIndex {
            occurrences,
            names,
            display,
            symbol_to_function: BTreeMap::new(),
            symbol_to_block: BTreeMap::new(),
            buckets: HashMap::new(),
            stoplist_fingerprint: stoplist.fingerprint(),
            stoplist: Arc::new(stoplist.clone()),
        };
        index.derive();
        index
    }

    fn derive(&mut self) {
        self.symbol_to_function.clear();
        self.symbol_to_block.clear();
        self.buckets.clear();
        for (sym, sites) in &self.occurrences {
            if self.stoplist.contains(sym) || sym.chars().count() < MIN_SYMBOL_LEN {
                continue;
            }
            let mut funcs = sites.iter().map(|s| s.0);
            let first = funcs.next().expect("occurrence sets are never empty");
            if funcs.all(|e| e == first) {
                self.symbol_to_function.insert(sym.clone(), first);
                let c = sym.chars().next().expect("non-empty");
                self.buckets.entry((c, sym.chars().count())).or_default().push(sym.clone());
            }
            if sites.len() == 1 {
                self.symbol_to_block.insert(sym.clone(), *sites.iter().next().unwrap());
            }
        }
    }

    pub fn symbol_to_function(&self) -> &BTreeMap<String, Addr> {
        &self.symbol_to_function
    }

    pub fn symbol_to_block(&self) -> &BTreeMap<String, Site> {
        &self.symbol_to_block
    }

    pub fn stoplist_fingerprint(&self) -> &str {
        &self.stoplist_fingerprint
    }

    pub fn is_stopword(&self, sanitized: &str) -> bool {
        self.stoplist.contains(sanitized)
    }

    pub fn function_of(&self, sanitized: &str) -> Option<Addr> {
        self.symbol_to_function.get(sanitized).copied()
    }

    /// Discriminative symbols starting with `first` whose length is within `band` of `len`.
    pub fn candidates(&self, first: char, len: usize, band: usize) -> impl Iterator<Item = &str> {
        (len.saturating_sub(band)..=len + band)
            .filter_map(move |l| self.buckets.get(&(first, l)))
            .flatten()
            .map(String::as_str)
    }

    /// Artifact currently named `name` (any displayed form; sanitized before lookup).
    pub fn resolve_name(&self, name: &str) -> Option<NamedArtifact> {
        self.names.get(&sanitize_symbol(name)).copied()
    }

    /// Current displayed name of an artifact.
    pub fn display_name(&self, artifact: NamedArtifact) -> Option<&str> {
        self.display.get(&artifact).map(String::as_str)
    }

    pub fn function_name(&self, entry: Addr) -> Option<&str> {
        self.display_name(NamedArtifact::Function(entry))
    }

    /// Whether `name` occurs anywhere (within `function` when given).
    pub fn occurs(&self, name: &str, function: Option<Addr>) -> bool {
        self.occurrences
            .get(&sanitize_symbol(name))
            .is_some_and(|sites| function.is_none_or(|f| sites.iter().any(|s| s.0 == f)))
    }

    fn move_occurrences(&mut self, old: &str, new: &str, function: Option<Addr>) -> bool {
        let Some(sites) = self.occurrences.remove(old) else {
            return false;
        };
        let (moved, kept): (BTreeSet<Site>, BTreeSet<Site>) =
            sites.into_iter().partition(|s| function.is_none_or(|f| s.0 == f));
        if !kept.is_empty() {
            self.occurrences.insert(old.to_string(), kept);
        }
        let any = !moved.is_empty();
        if any && !new.is_empty() {
            self.occurrences.entry(new.to_string()).or_default().extend(moved);
        }
        any
    }

    /// Applies one rename, moving symbol occurrences to the new name.
    pub fn apply_rename(&mut self, ev: &RenameEvent) -> Result<()> {
        let old = sanitize_symbol(&ev.old_name);
        let new = sanitize_symbol(&ev.new_name);
        match ev.scope {
            RenameScope::Function | RenameScope::Global => {
                let artifact = self
                    .names
                    .get(&old)
                    .copied()
                    .filter(|a| matches!((a, ev.scope), (NamedArtifact::Function(_), RenameScope::Function) | (NamedArtifact::Global(_), RenameScope::Global)))
                    .ok_or_else(|| Error::AmbiguousTarget(ev.old_name.clone()))?;
                self.names.remove(&old);
                self.names.insert(new.clone(), artifact);
                self.display.insert(artifact, ev.new_name.clone());
                self.move_occurrences(&old, &new, None);
            }
            RenameScope::Local { function } => {
                if !self.move_occurrences(&old, &new, Some(function)) {
                    return Err(Error::AmbiguousTarget(ev.old_name.clone()));
                }
            }
        }
        self.derive();
        Ok(())
    }
}

/// Symbol index over time: the base index plus the renames performed so far.
#[derive(Debug, Clone)]
pub struct SymbolTimeline {
    renames: Vec<RenameEvent>,
    /// `views[k]` reflects the first `k` renames.
    views: Vec<Arc<SymbolIndex>>,
}

impl SymbolTimeline {
    pub fn new(base: SymbolIndex) -> Self {
        SymbolTimeline {
            renames: Vec::new(),
            views: vec![Arc::new(base)],
        }
    }

    pub fn base(&self) -> &Arc<SymbolIndex> {
        &self.views[0]
    }

    pub fn latest(&self) -> &Arc<SymbolIndex> {
        self.views.last().expect("base view always present")
    }

    pub fn renames(&self) -> &[RenameEvent] {
        &self.renames
    }

    /// Appends a rename. Renames must arrive in time order and name something
    /// that resolves in the latest view.
    pub fn push(&mut self, ev: RenameEvent) -> Result<()> {
        if self.renames.last().is_some_and(|last| last.t > ev.t) {
            return Err(Error::schema("symbol timeline", "renames must be appended in time order"));
        }
        let mut next = (**self.latest()).clone();
        next.apply_rename(&ev)?;
        self.renames.push(ev);
        self.views.push(Arc::new(next));
        Ok(())
    }

    /// The index reflecting every rename with event time ≤ `t`.
    pub fn at(&self, t: Timestamp) -> Arc<SymbolIndex> {
        let applied = self.renames.partition_point(|r| r.t <= t);
        self.views[applied].clone()
    }
}
