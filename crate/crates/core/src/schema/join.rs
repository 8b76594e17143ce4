//! Full outer joins along FK spanning trees.
//!
//! A joined row is a set of real tuples forming a connected segment of the
//! join tree; every other table is NULL-padded. Rows are counted and
//! decoded per segment top, so the exact size is known without
//! materializing the join and uniform samples are drawn by index.

use std::borrow::Cow;
use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ingest::Database;
use super::table::{ColumnData, SampleTable};
use super::{indicator_column, ColumnMeta, ColumnRole, SchemaGraph};
use crate::error::{Error, Result};
use crate::value::{ColumnKind, Value};

pub const DEFAULT_MAX_ROWS: usize = 10_000_000;

/// Row index per plan table; `None` is NULL padding.
pub type JoinRow = Vec<Option<u32>>;

#[derive(Debug, Clone, PartialEq)]
pub struct JoinPlan {
    /// Tables in attach order; the first is the root.
    pub tables: Vec<String>,
    /// Per table: (parent position, FK index) for all but the root.
    pub parent: Vec<Option<(usize, usize)>>,
    /// Per table: (child position, FK index).
    pub children: Vec<Vec<(usize, usize)>>,
}

impl JoinPlan {
    /// Spanning tree of `table_set`, attaching tables in declaration order.
    pub fn new<S: AsRef<str>>(schema: &SchemaGraph, table_set: &[S]) -> Result<JoinPlan> {
        let mut set = BTreeSet::new();
        for t in table_set {
            let t = t.as_ref();
            schema.require_table(t)?;
            if !set.insert(t.to_string()) {
                return Err(Error::InvalidTableSet(format!(
                    "table {t} appears twice; self joins are not supported"
                )));
            }
        }
        if set.is_empty() {
            return Err(Error::InvalidTableSet("empty table set".into()));
        }
        if !schema.is_connected(&set) {
            return Err(Error::Disconnected(set.into_iter().collect()));
        }
        let ordered = schema.in_declaration_order(set.iter().map(|s| s.as_str()));
        let mut tables = vec![ordered[0].clone()];
        let mut parent = vec![None];
        let mut children = vec![Vec::new()];
        while tables.len() < ordered.len() {
            let (next, pos, fk) = ordered
                .iter()
                .filter(|t| !tables.contains(t))
                .find_map(|t| {
                    tables.iter().enumerate().find_map(|(pos, covered)| {
                        schema
                            .fks
                            .iter()
                            .position(|fk| fk.touches(t) && fk.other(t) == covered)
                            .map(|fk| (t.clone(), pos, fk))
                    })
                })
                .expect("connected set");
            let me = tables.len();
            tables.push(next);
            parent.push(Some((pos, fk)));
            children.push(Vec::new());
            children[pos].push((me, fk));
        }
        Ok(JoinPlan {
            tables,
            parent,
            children,
        })
    }

    pub fn position(&self, table: &str) -> Option<usize> {
        self.tables.iter().position(|t| t == table)
    }

    /// Build the SampleTable for the given joined rows: every column of
    /// every plan table, factor columns (join-side variant for edges inside
    /// the set) and one indicator per table when more than one table joins.
    pub fn materialize(&self, db: &Database, rows: &[JoinRow]) -> SampleTable {
        let mut columns = Vec::new();
        let mut data = Vec::new();
        let multi = self.tables.len() > 1;
        for (pos, name) in self.tables.iter().enumerate() {
            let base = db.table(name).expect("plan table");
            let idx = || rows.iter().map(move |r| r[pos].map(|x| x as usize));
            for (meta, col) in base.columns.iter().zip(&base.data) {
                match &meta.role {
                    ColumnRole::TupleFactor {
                        referencing,
                        referenced,
                        ..
                    } if self.tables.contains(referencing) => {
                        let ColumnData::Num(v) = col else {
                            unreachable!("factor columns are numeric")
                        };
                        let values = idx()
                            .map(|r| Some(r.and_then(|r| v[r]).unwrap_or(0.0).max(1.0)))
                            .collect();
                        columns.push(ColumnMeta {
                            name: meta.name.clone(),
                            kind: ColumnKind::Continuous,
                            nullable: false,
                            role: ColumnRole::TupleFactor {
                                referenced: referenced.clone(),
                                referencing: referencing.clone(),
                                at_least_one: true,
                            },
                        });
                        data.push(ColumnData::Num(values));
                    }
                    _ => {
                        let mut m = meta.clone();
                        m.nullable |= multi;
                        columns.push(m);
                        data.push(col.gather(idx()));
                    }
                }
            }
            if multi {
                columns.push(ColumnMeta {
                    name: indicator_column(name),
                    kind: ColumnKind::Continuous,
                    nullable: false,
                    role: ColumnRole::Indicator {
                        table: name.clone(),
                    },
                });
                data.push(ColumnData::Num(
                    idx().map(|r| Some(if r.is_some() { 1.0 } else { 0.0 })).collect(),
                ));
            }
        }
        SampleTable {
            origin_tables: self.tables.clone(),
            columns,
            data,
            sample_rate: 1.0,
            full_population_size: rows.len() as u64,
            fds: Vec::new(),
        }
    }
}

/// Precomputed adjacency and segment counts for a plan over a database.
pub(crate) struct JoinIndex<'a> {
    plan: &'a JoinPlan,
    /// Per non-root table: matched child rows for each parent row.
    down: Vec<Vec<Vec<u32>>>,
    /// Per non-root table: matched parent rows for each of its rows.
    up: Vec<Vec<Vec<u32>>>,
    /// Per table and row: number of joined rows in the subtree below it.
    counts: Vec<Vec<u64>>,
    /// Segment tops: (position, row, exclusive cumulative end).
    tops: Vec<(usize, u32, u64)>,
}

impl<'a> JoinIndex<'a> {
    #[allow(clippy::needless_range_loop)]
    pub(crate) fn new(db: &Database, plan: &'a JoinPlan) -> Result<Self> {
        let n = plan.tables.len();
        let sizes: Vec<usize> = plan
            .tables
            .iter()
            .map(|t| db.table(t).expect("plan table").num_rows())
            .collect();
        let mut down = vec![Vec::new(); n];
        let mut up = vec![Vec::new(); n];
        for pos in 1..n {
            let (ppos, fk_idx) = plan.parent[pos].expect("non-root");
            let fk = &db.schema.fks[fk_idx];
            let mut d = vec![Vec::new(); sizes[ppos]];
            let mut u = vec![Vec::new(); sizes[pos]];
            if fk.referencing_table == plan.tables[pos] {
                // child rows point at parent rows
                for c in 0..sizes[pos] {
                    if let Some(p) = db.referenced_row(fk_idx, c) {
                        d[p].push(c as u32);
                        u[c].push(p as u32);
                    }
                }
            } else {
                for p in 0..sizes[ppos] {
                    if let Some(c) = db.referenced_row(fk_idx, p) {
                        d[p].push(c as u32);
                        u[c].push(p as u32);
                    }
                }
            }
            down[pos] = d;
            up[pos] = u;
        }
        let overflow = || Error::JoinOverflow(plan.tables.clone());
        let mut counts: Vec<Vec<u64>> = sizes.iter().map(|&s| vec![1u64; s]).collect();
        for pos in (0..n).rev() {
            for &(cpos, _) in &plan.children[pos] {
                for row in 0..sizes[pos] {
                    let mut m: u64 = 0;
                    for &c in &down[cpos][row] {
                        m = m.checked_add(counts[cpos][c as usize]).ok_or_else(overflow)?;
                    }
                    let m = m.max(1);
                    counts[pos][row] = counts[pos][row].checked_mul(m).ok_or_else(overflow)?;
                }
            }
        }
        let mut tops = Vec::new();
        let mut total: u64 = 0;
        for pos in 0..n {
            for row in 0..sizes[pos] {
                if pos == 0 || up[pos][row].is_empty() {
                    total = total.checked_add(counts[pos][row]).ok_or_else(overflow)?;
                    tops.push((pos, row as u32, total));
                }
            }
        }
        Ok(JoinIndex {
            plan,
            down,
            up,
            counts,
            tops,
        })
    }

    pub(crate) fn size(&self) -> u64 {
        self.tops.last().map_or(0, |t| t.2)
    }

    /// The `k`-th joined row in canonical order.
    pub(crate) fn decode(&self, k: u64) -> JoinRow {
        let i = self.tops.partition_point(|t| t.2 <= k);
        let (pos, row, end) = self.tops[i];
        let start = end - self.counts[pos][row as usize];
        let mut out = vec![None; self.plan.tables.len()];
        self.decode_from(pos, row, k - start, &mut out);
        out
    }

    fn decode_from(&self, pos: usize, row: u32, mut k: u64, out: &mut JoinRow) {
        out[pos] = Some(row);
        // last child varies fastest, matching enumeration order
        for &(cpos, _) in self.plan.children[pos].iter().rev() {
            let matched = &self.down[cpos][row as usize];
            let m: u64 = matched
                .iter()
                .map(|&c| self.counts[cpos][c as usize])
                .sum::<u64>()
                .max(1);
            let mut local = k % m;
            k /= m;
            for &c in matched {
                let cc = self.counts[cpos][c as usize];
                if local < cc {
                    self.decode_from(cpos, c, local, out);
                    break;
                }
                local -= cc;
            }
        }
    }

    /// All joined rows in canonical order.
    pub(crate) fn all_rows(&self) -> Vec<JoinRow> {
        let mut out = Vec::with_capacity(self.size() as usize);
        for &(pos, row, _) in &self.tops {
            let mut base = vec![None; self.plan.tables.len()];
            self.expand(pos, row, &mut base, &mut out, &|_, _| true);
        }
        out
    }

    /// All joined rows that carry tuple `row` of the table at `pos`.
    #[cfg(test)]
    fn rows_containing(&self, pos: usize, row: u32) -> Vec<JoinRow> {
        rows_containing(self, self.plan, pos, row)
    }

    fn expand(
        &self,
        pos: usize,
        row: u32,
        current: &mut JoinRow,
        out: &mut Vec<JoinRow>,
        filter: &dyn Fn(usize, u32) -> bool,
    ) {
        expand(self, self.plan, pos, row, current, out, filter)
    }
}

/// Neighbours of a tuple along the tree edges of a plan.
trait Adjacency {
    /// Rows of the table at `cpos` matched with parent row `row`.
    fn down(&self, cpos: usize, row: u32) -> Cow<'_, [u32]>;
    /// Parent rows matched with row `row` of the table at `pos`.
    fn up(&self, pos: usize, row: u32) -> Cow<'_, [u32]>;
}

impl Adjacency for JoinIndex<'_> {
    fn down(&self, cpos: usize, row: u32) -> Cow<'_, [u32]> {
        Cow::Borrowed(&self.down[cpos][row as usize])
    }

    fn up(&self, pos: usize, row: u32) -> Cow<'_, [u32]> {
        Cow::Borrowed(&self.up[pos][row as usize])
    }
}

/// Adjacency read on demand from the database key indexes, for local
/// lookups that should not scan whole tables.
struct KeyAdjacency<'a> {
    db: &'a Database,
    plan: &'a JoinPlan,
}

impl KeyAdjacency<'_> {
    fn referencing(&self, fk_idx: usize, table: &str, row: u32) -> Vec<u32> {
        self.db
            .primary_key_of(table, row as usize)
            .map(|k| self.db.referencing_rows(fk_idx, &k).iter().map(|&r| r as u32).collect())
            .unwrap_or_default()
    }

    fn referenced(&self, fk_idx: usize, row: u32) -> Vec<u32> {
        self.db
            .referenced_row(fk_idx, row as usize)
            .map(|r| vec![r as u32])
            .unwrap_or_default()
    }

    fn child_references_parent(&self, pos: usize) -> (usize, usize, bool) {
        let (ppos, fk_idx) = self.plan.parent[pos].expect("non-root");
        let fk = &self.db.schema.fks[fk_idx];
        (ppos, fk_idx, fk.referencing_table == self.plan.tables[pos])
    }
}

impl Adjacency for KeyAdjacency<'_> {
    fn down(&self, cpos: usize, row: u32) -> Cow<'_, [u32]> {
        let (ppos, fk_idx, child_refs) = self.child_references_parent(cpos);
        Cow::Owned(if child_refs {
            self.referencing(fk_idx, &self.plan.tables[ppos], row)
        } else {
            self.referenced(fk_idx, row)
        })
    }

    fn up(&self, pos: usize, row: u32) -> Cow<'_, [u32]> {
        if pos == 0 {
            return Cow::Owned(Vec::new());
        }
        let (_, fk_idx, child_refs) = self.child_references_parent(pos);
        Cow::Owned(if child_refs {
            self.referenced(fk_idx, row)
        } else {
            self.referencing(fk_idx, &self.plan.tables[pos], row)
        })
    }
}

fn rows_containing(adj: &dyn Adjacency, plan: &JoinPlan, pos: usize, row: u32) -> Vec<JoinRow> {
    let n = plan.tables.len();
    // allowed tuples on the path from `pos` up to its segment tops
    let mut allowed: Vec<Option<BTreeSet<u32>>> = vec![None; n];
    allowed[pos] = Some(BTreeSet::from([row]));
    let mut tops = Vec::new();
    let mut level = (pos, BTreeSet::from([row]));
    loop {
        let (p, rows) = &level;
        let mut next = BTreeSet::new();
        for &r in rows {
            let up = if *p == 0 { Cow::Owned(Vec::new()) } else { adj.up(*p, r) };
            if up.is_empty() {
                tops.push((*p, r));
            } else {
                next.extend(up.iter().copied());
            }
        }
        if next.is_empty() {
            break;
        }
        let (ppos, _) = plan.parent[*p].expect("non-root has parent");
        allowed[ppos] = Some(next.clone());
        level = (ppos, next);
    }
    let filter = |p: usize, r: u32| allowed[p].as_ref().is_none_or(|s| s.contains(&r));
    let mut out = Vec::new();
    for (p, r) in tops {
        let mut base = vec![None; n];
        expand(adj, plan, p, r, &mut base, &mut out, &filter);
    }
    out.retain(|jr| jr[pos] == Some(row));
    out
}

fn expand(
    adj: &dyn Adjacency,
    plan: &JoinPlan,
    pos: usize,
    row: u32,
    current: &mut JoinRow,
    out: &mut Vec<JoinRow>,
    filter: &dyn Fn(usize, u32) -> bool,
) {
    current[pos] = Some(row);
    expand_children(adj, plan, &plan.children[pos], 0, row, current, out, filter);
    current[pos] = None;
}

#[allow(clippy::too_many_arguments)]
fn expand_children(
    adj: &dyn Adjacency,
    plan: &JoinPlan,
    kids: &[(usize, usize)],
    i: usize,
    row: u32,
    current: &mut JoinRow,
    out: &mut Vec<JoinRow>,
    filter: &dyn Fn(usize, u32) -> bool,
) {
    if i == kids.len() {
        out.push(current.clone());
        return;
    }
    let cpos = kids[i].0;
    let matched: Vec<u32> = adj.down(cpos, row).iter().copied().filter(|&c| filter(cpos, c)).collect();
    if matched.is_empty() {
        expand_children(adj, plan, kids, i + 1, row, current, out, filter);
        return;
    }
    for c in matched {
        // collect the child's subtree expansions, then continue with the
        // remaining siblings for each of them
        let mut sub = Vec::new();
        let mut scratch = current.clone();
        expand(adj, plan, cpos, c, &mut scratch, &mut sub, filter);
        for s in sub {
            let mut merged = current.clone();
            for (j, v) in s.iter().enumerate() {
                if v.is_some() {
                    merged[j] = *v;
                }
            }
            let saved = std::mem::replace(current, merged);
            expand_children(adj, plan, kids, i + 1, row, current, out, filter);
            *current = saved;
        }
    }
}

/// Exact row count of the full outer join over `table_set`.
pub fn join_size<S: AsRef<str>>(db: &Database, table_set: &[S]) -> Result<u64> {
    let plan = JoinPlan::new(&db.schema, table_set)?;
    Ok(JoinIndex::new(db, &plan)?.size())
}

/// Materialize the full outer join over `table_set`, keeping a uniform
/// sample of `max_rows` rows when it is larger.
pub fn full_outer_join_sample<S: AsRef<str>>(
    db: &Database,
    table_set: &[S],
    max_rows: usize,
    seed: u64,
) -> Result<SampleTable> {
    let plan = JoinPlan::new(&db.schema, table_set)?;
    let index = JoinIndex::new(db, &plan)?;
    let total = index.size();
    let rows: Vec<JoinRow> = if total as u128 <= max_rows as u128 {
        index.all_rows()
    } else {
        let n = usize::try_from(total).map_err(|_| Error::JoinOverflow(plan.tables.clone()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = rand::seq::index::sample(&mut rng, n, max_rows).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|k| index.decode(k as u64)).collect()
    };
    let mut table = plan.materialize(db, &rows);
    table.full_population_size = total;
    table.sample_rate = if total == 0 {
        1.0
    } else {
        rows.len() as f64 / total as f64
    };
    Ok(table)
}

/// Join rows of `plan` over `db` containing the given base tuple.
pub fn join_rows_containing(
    db: &Database,
    plan: &JoinPlan,
    table: &str,
    row: usize,
) -> Result<Vec<JoinRow>> {
    let pos = plan
        .position(table)
        .ok_or_else(|| Error::UnknownTable(table.to_string()))?;
    Ok(rows_containing(&KeyAdjacency { db, plan }, plan, pos, row as u32))
}

/// Distinct join rows of `plan` carrying any of the given base tuples, in
/// sorted order. Anchors on tables outside the plan are ignored.
pub fn join_rows_containing_any(
    db: &Database,
    plan: &JoinPlan,
    anchors: &[(&str, usize)],
) -> Result<Vec<JoinRow>> {
    let adj = KeyAdjacency { db, plan };
    let mut out = BTreeSet::new();
    for &(table, row) in anchors {
        if let Some(pos) = plan.position(table) {
            out.extend(rows_containing(&adj, plan, pos, row as u32));
        }
    }
    Ok(out.into_iter().collect())
}

/// Values of one joined row, in the column order of `plan.materialize`.
pub fn join_row_values(db: &Database, plan: &JoinPlan, row: &JoinRow) -> Vec<Value> {
    let t = plan.materialize(db, std::slice::from_ref(row));
    t.row(0)
}
