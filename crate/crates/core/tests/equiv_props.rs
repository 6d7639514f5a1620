mod common;

use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use common::*;
use pirv::equiv::{self, apply_rules, builtin_rules, CompareSet, EquivOptions, Side, Verdict};
use pirv::interp::Config;
use pirv::lang::{BinOp, CoreProgram, ElemKind};
use pirv::memory::{Index, Memory, TaskId};
use pirv::symval::{Scalar, SymOp, SymPool, SymRef, Value};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EQUIVALENT: &[(&str, &str)] = &[
    ("matmul", "matmul_tiled"),
    ("matmul", "matmul_unrolled"),
    ("gemm", "gemm_interchanged"),
    ("2mm", "2mm_unrolled"),
    ("jacobi1d", "jacobi1d_unrolled"),
    ("jacobi2d", "jacobi2d_tiled"),
    ("seidel2d", "seidel2d_unrolled"),
    ("floyd_warshall", "floyd_warshall_tiled_ij"),
];

const MISMATCHED: &[(&str, &str)] = &[
    ("matmul", "matmul_bug"),
    ("gemm", "gemm_bug"),
    ("2mm", "2mm_bug"),
    ("jacobi1d", "jacobi1d_bug"),
    ("jacobi2d", "jacobi2d_bug"),
    ("seidel2d", "seidel2d_bug"),
    ("floyd_warshall", "floyd_warshall_tiled_k"),
    ("elementwise_ab", "elementwise_ba"),
];

/// A finished kernel run, detached from the borrow of its program.
struct Finished {
    prog: CoreProgram,
    mem: Memory,
    pool: SymPool,
}

fn finish(name: &str) -> Finished {
    let prog = compile(&corpus_text(&format!("kernels/{name}.pir")));
    let mut pool = SymPool::new();
    let ex = run(&prog, Config::default(), &mut pool);
    assert!(ex.error.is_none(), "{name}: {:?}", ex.error);
    let mem = ex.machine.mem.clone();
    drop(ex);
    Finished { prog, mem, pool }
}

fn compare(a: &mut Finished, b: &mut Finished, opts: &EquivOptions) -> Verdict {
    equiv::check_equiv(
        Side {
            prog: &a.prog,
            mem: &a.mem,
            pool: &mut a.pool,
        },
        Side {
            prog: &b.prog,
            mem: &b.mem,
            pool: &mut b.pool,
        },
        opts,
    )
    .unwrap()
    .verdict
}

fn strict() -> EquivOptions {
    EquivOptions {
        compare_set: CompareSet::StrictAll,
        ..EquivOptions::default()
    }
}

#[test]
fn verdicts_are_symmetric_and_strict_implies_nonlocal() {
    let mut cache: BTreeMap<&str, Finished> = BTreeMap::new();
    let pairs = EQUIVALENT.iter().map(|p| (p, Verdict::Equivalent));
    let pairs = pairs.chain(MISMATCHED.iter().map(|p| (p, Verdict::Mismatch)));
    for (&(a, b), want) in pairs {
        for n in [a, b] {
            cache.entry(n).or_insert_with(|| finish(n));
        }
        let mut fa = cache.remove(a).unwrap();
        let mut fb = cache.remove(b).unwrap();
        let ab = compare(&mut fa, &mut fb, &EquivOptions::default());
        let ba = compare(&mut fb, &mut fa, &EquivOptions::default());
        assert_eq!(ab, want, "{a} vs {b}");
        assert_eq!(ab, ba, "{a} vs {b} is not symmetric");
        if compare(&mut fa, &mut fb, &strict()) == Verdict::Equivalent {
            assert_eq!(
                ab,
                Verdict::Equivalent,
                "{a} vs {b}: strict without non-local"
            );
        }
        cache.insert(a, fa);
        cache.insert(b, fb);
    }
}

#[test]
fn a_program_is_strictly_equivalent_to_itself() {
    for name in ["matmul", "jacobi1d", "floyd_warshall", "elementwise_ab"] {
        let (mut a, mut b) = (finish(name), finish(name));
        assert_eq!(
            compare(&mut a, &mut b, &strict()),
            Verdict::Equivalent,
            "{name}"
        );
        assert_eq!(
            compare(&mut a, &mut b, &EquivOptions::default()),
            Verdict::Equivalent,
            "{name}"
        );
    }
}

/// Deterministic pseudo-random input for one leaf.
fn input(seed: u64, name: &str, idx: &Index, kind: ElemKind) -> Scalar {
    let mut h = rustc_hash::FxHasher::default();
    (seed, name, idx).hash(&mut h);
    let mut rng = ChaCha8Rng::seed_from_u64(h.finish());
    match kind {
        ElemKind::Int | ElemKind::Semaphore => Scalar::Int(rng.gen_range(-60..60)),
        ElemKind::Float => Scalar::Float(rng.gen_range(-64..64) as f64 / 8.0),
    }
}

/// Concrete values of `vals` under the inputs chosen by `seed`.
fn concretize(f: &Finished, vals: &[Value], seed: u64) -> Vec<Value> {
    let roots: Vec<SymRef> = vals
        .iter()
        .filter_map(|v| match v {
            Value::Sym(r) => Some(*r),
            _ => None,
        })
        .collect();
    let mut done = f
        .pool
        .concretize_all(&roots, &mut |n, i, k| input(seed, n, i, k))
        .into_iter();
    vals.iter()
        .map(|v| match v {
            Value::Sym(_) => done.next().unwrap(),
            other => *other,
        })
        .collect()
}

fn same_value(a: Value, b: Value) -> bool {
    match (a, b) {
        (Value::Concrete(Scalar::Float(x)), Value::Concrete(Scalar::Float(y))) => {
            x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan())
        }
        (Value::Concrete(Scalar::Int(x)), Value::Concrete(Scalar::Int(y))) => x == y,
        (Value::Err, Value::Err) => true,
        _ => false,
    }
}

/// Root-owned, non-private cells with their values.
fn outputs(f: &Finished) -> BTreeMap<(String, Index), Value> {
    let mut out = BTreeMap::new();
    for st in f.mem.stores() {
        let name = &f.prog.var(st.var).name;
        if st.owner != TaskId::root() || name.contains('.') {
            continue;
        }
        for (i, v) in &st.cells {
            out.insert((name.clone(), i.clone()), *v);
        }
    }
    out
}

#[test]
fn equivalent_kernels_agree_on_random_inputs() {
    for &(a, b) in EQUIVALENT {
        let (fa, fb) = (finish(a), finish(b));
        let (oa, ob) = (outputs(&fa), outputs(&fb));
        assert_eq!(
            oa.keys().collect::<Vec<_>>(),
            ob.keys().collect::<Vec<_>>(),
            "{a} vs {b}"
        );
        let (va, vb): (Vec<Value>, Vec<Value>) = (
            oa.values().copied().collect(),
            ob.values().copied().collect(),
        );
        for seed in 0..50 {
            let (ca, cb) = (concretize(&fa, &va, seed), concretize(&fb, &vb, seed));
            for ((k, x), y) in oa.keys().zip(&ca).zip(&cb) {
                assert!(
                    same_value(*x, *y),
                    "{a} vs {b}, {k:?}, seed {seed}: {x:?} vs {y:?}"
                );
            }
        }
    }
}

#[derive(Clone, Debug)]
enum Tree {
    Leaf(u8),
    Const(i32),
    Op(BinOp, Box<Tree>, Box<Tree>),
}

fn tree() -> impl Strategy<Value = Tree> {
    let leaf = prop_oneof![
        (0u8..3).prop_map(Tree::Leaf),
        (0i32..3).prop_map(Tree::Const)
    ];
    leaf.prop_recursive(5, 48, 2, |inner| {
        (
            prop_oneof![
                Just(BinOp::Add),
                Just(BinOp::Sub),
                Just(BinOp::Mul),
                Just(BinOp::Div)
            ],
            inner.clone(),
            inner,
        )
            .prop_map(|(op, l, r)| Tree::Op(op, Box::new(l), Box::new(r)))
    })
}

/// Builds the tree, planting a rule redex at every operator so the rules fire often.
fn build(pool: &mut SymPool, t: &Tree, plant: &mut impl FnMut() -> u8) -> SymRef {
    match t {
        Tree::Leaf(k) => pool.leaf(
            ["a", "b", "c"][*k as usize],
            &Index::scalar(0),
            ElemKind::Int,
            1,
        ),
        Tree::Const(c) => pool.constant(Scalar::Int(*c), 1),
        Tree::Op(op, l, r) => {
            let (l, r) = (build(pool, l, plant), build(pool, r, plant));
            let e = pool.op(SymOp::Binary(*op), &[l, r], 1);
            let zero = pool.constant(Scalar::Int(0), 1);
            match plant() {
                0 => pool.op(SymOp::Binary(BinOp::Div), &[e, e], 1),
                1 => pool.op(SymOp::Binary(BinOp::Add), &[e, zero], 1),
                2 => pool.op(SymOp::Binary(BinOp::Mul), &[e, zero], 1),
                _ => e,
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn builtin_rules_preserve_defined_values(t in tree(), plant_seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(plant_seed);
        let mut pool = SymPool::new();
        let e = build(&mut pool, &t, &mut || rng.gen_range(0..5));
        let (r, _) = apply_rules(&mut pool, e, &builtin_rules(), 100_000).unwrap();
        for seed in 0..20 {
            let env = |n: &str, i: &Index, k: ElemKind| input(seed, n, i, k);
            let before = pool.concretize(e, &mut env.clone());
            let after = pool.concretize(r, &mut env.clone());
            if before != Value::Err {
                prop_assert_eq!(before, after, "seed {}", seed);
            }
        }
    }
}
