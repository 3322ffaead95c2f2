//! Maximum cliques by branch and bound with greedy-coloring bounds.

/// Undirected graph as a symmetric adjacency matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    adj: Vec<Vec<bool>>,
}

impl Graph {
    pub fn new(n: usize) -> Self {
        Graph {
            adj: vec![vec![false; n]; n],
        }
    }

    pub fn from_fn(n: usize, mut edge: impl FnMut(usize, usize) -> bool) -> Self {
        let mut g = Graph::new(n);
        for i in 0..n {
            for j in i + 1..n {
                if edge(i, j) {
                    g.add_edge(i, j);
                }
            }
        }
        g
    }

    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    pub fn add_edge(&mut self, i: usize, j: usize) {
        if i != j {
            self.adj[i][j] = true;
            self.adj[j][i] = true;
        }
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[i][j]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].iter().filter(|&&b| b).count()
    }
}

/// A maximum clique (vertices in increasing order). Empty for the empty graph.
pub fn max_clique(g: &Graph) -> Vec<usize> {
    let n = g.len();
    // highest degree first tends to find large cliques early
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| g.degree(b).cmp(&g.degree(a)).then(a.cmp(&b)));
    let mut best = Vec::new();
    let mut current = Vec::new();
    expand(g, &mut current, order, &mut best);
    best.sort_unstable();
    best
}

fn expand(g: &Graph, current: &mut Vec<usize>, candidates: Vec<usize>, best: &mut Vec<usize>) {
    let (order, colors) = color_sort(g, &candidates);
    for idx in (0..order.len()).rev() {
        if current.len() + colors[idx] <= best.len() {
            return;
        }
        let v = order[idx];
        current.push(v);
        let next: Vec<usize> = order[..idx]
            .iter()
            .copied()
            .filter(|&w| g.has_edge(v, w))
            .collect();
        if next.is_empty() {
            if current.len() > best.len() {
                *best = current.clone();
            }
        } else {
            expand(g, current, next, best);
        }
        current.pop();
    }
}

/// Greedy sequential coloring. Returns the vertices sorted by color and, for
/// each position, the number of colors used up to it (a clique bound).
fn color_sort(g: &Graph, candidates: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut classes: Vec<Vec<usize>> = Vec::new();
    for &v in candidates {
        match classes
            .iter_mut()
            .find(|class| class.iter().all(|&w| !g.has_edge(v, w)))
        {
            Some(class) => class.push(v),
            None => classes.push(vec![v]),
        }
    }
    let mut order = Vec::with_capacity(candidates.len());
    let mut colors = Vec::with_capacity(candidates.len());
    for (k, class) in classes.into_iter().enumerate() {
        for v in class {
            order.push(v);
            colors.push(k + 1);
        }
    }
    (order, colors)
}

/// Maximum-weight clique for non-negative vertex weights. Returns `(weight, clique)`.
pub fn max_weight_clique(g: &Graph, weights: &[usize]) -> (usize, Vec<usize>) {
    assert_eq!(weights.len(), g.len());
    let mut order: Vec<usize> = (0..g.len()).collect();
    order.sort_by(|&a, &b| weights[b].cmp(&weights[a]).then(a.cmp(&b)));
    let mut best = (0usize, Vec::new());
    let mut current = Vec::new();
    expand_weighted(g, weights, &mut current, 0, &order, &mut best);
    best.1.sort_unstable();
    best
}

fn expand_weighted(
    g: &Graph,
    weights: &[usize],
    current: &mut Vec<usize>,
    weight: usize,
    candidates: &[usize],
    best: &mut (usize, Vec<usize>),
) {
    if weight > best.0 {
        *best = (weight, current.clone());
    }
    let mut remaining: usize = candidates.iter().map(|&v| weights[v]).sum();
    for (idx, &v) in candidates.iter().enumerate() {
        if weight + remaining <= best.0 {
            return;
        }
        remaining -= weights[v];
        current.push(v);
        let next: Vec<usize> = candidates[idx + 1..]
            .iter()
            .copied()
            .filter(|&w| g.has_edge(v, w))
            .collect();
        expand_weighted(g, weights, current, weight + weights[v], &next, best);
        current.pop();
    }
}
