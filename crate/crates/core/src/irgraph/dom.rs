//! Dominator tree and dominance frontiers over plain successor lists.
//!
//! Blocks are indices into `succs`; blocks unreachable from the entry get no
//! immediate dominator and are ignored.

use std::collections::BTreeSet;

pub fn reverse_post_order(succs: &[Vec<usize>], entry: usize) -> Vec<usize> {
    let mut seen = vec![false; succs.len()];
    let mut post = Vec::with_capacity(succs.len());
    let mut stack = vec![(entry, 0usize)];
    seen[entry] = true;
    while let Some(top) = stack.len().checked_sub(1) {
        let (b, next) = stack[top];
        if let Some(&s) = succs[b].get(next) {
            stack[top].1 += 1;
            if !seen[s] {
                seen[s] = true;
                stack.push((s, 0));
            }
        } else {
            post.push(b);
            stack.pop();
        }
    }
    post.reverse();
    post
}

fn predecessors(succs: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut preds = vec![Vec::new(); succs.len()];
    for (b, ss) in succs.iter().enumerate() {
        for &s in ss {
            preds[s].push(b);
        }
    }
    preds
}

/// Cooper-Harvey-Kennedy iterative algorithm. The entry is its own idom.
pub fn immediate_dominators(succs: &[Vec<usize>], entry: usize) -> Vec<Option<usize>> {
    let rpo = reverse_post_order(succs, entry);
    let mut order = vec![usize::MAX; succs.len()];
    for (i, &b) in rpo.iter().enumerate() {
        order[b] = i;
    }
    let preds = predecessors(succs);
    let mut idom: Vec<Option<usize>> = vec![None; succs.len()];
    idom[entry] = Some(entry);
    let intersect = |idom: &[Option<usize>], mut a: usize, mut b: usize| {
        while a != b {
            while order[a] > order[b] {
                a = idom[a].unwrap();
            }
            while order[b] > order[a] {
                b = idom[b].unwrap();
            }
        }
        a
    };
    let mut changed = true;
    while changed {
        changed = false;
        for &b in rpo.iter().skip(1) {
            let mut new = None;
            for &p in &preds[b] {
                if idom[p].is_none() {
                    continue;
                }
                new = Some(match new {
                    None => p,
                    Some(cur) => intersect(&idom, p, cur),
                });
            }
            if new.is_some() && idom[b] != new {
                idom[b] = new;
                changed = true;
            }
        }
    }
    idom
}

/// True when `a` dominates `b`.
pub fn dominates(idom: &[Option<usize>], entry: usize, a: usize, mut b: usize) -> bool {
    if idom[b].is_none() {
        return false;
    }
    loop {
        if a == b {
            return true;
        }
        if b == entry {
            return false;
        }
        b = idom[b].unwrap();
    }
}

/// DF(x) = { y | x dominates a predecessor of y and x does not strictly
/// dominate y }.
pub fn dominance_frontiers(
    succs: &[Vec<usize>],
    idom: &[Option<usize>],
    entry: usize,
) -> Vec<BTreeSet<usize>> {
    let mut df = vec![BTreeSet::new(); succs.len()];
    for (p, ss) in succs.iter().enumerate() {
        if idom[p].is_none() {
            continue;
        }
        for &y in ss {
            let mut runner = p;
            loop {
                let strict = runner != y && dominates(idom, entry, runner, y);
                if strict {
                    break;
                }
                df[runner].insert(y);
                if runner == entry {
                    break;
                }
                runner = idom[runner].unwrap();
            }
        }
    }
    df
}

/// Iterated dominance frontier of a set of blocks.
pub fn iterated_frontier(df: &[BTreeSet<usize>], blocks: &BTreeSet<usize>) -> BTreeSet<usize> {
    let mut result = BTreeSet::new();
    let mut work: Vec<usize> = blocks.iter().copied().collect();
    while let Some(b) = work.pop() {
        for &y in &df[b] {
            if result.insert(y) && !blocks.contains(&y) {
                work.push(y);
            }
        }
    }
    result
}
