//! Chart types, encoding heuristics, Vega-Lite emission and chart identity.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::featurize::MAX_CHART_COLUMNS;
use crate::ingest::{DataTable, DataType, TableSummary};

/// The five supported chart types. Declaration order is the tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChartType {
    Scatter,
    Bar,
    Line,
    Pie,
    Area,
}

impl ChartType {
    pub const ALL: [ChartType; 5] = [
        ChartType::Scatter,
        ChartType::Bar,
        ChartType::Line,
        ChartType::Pie,
        ChartType::Area,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<ChartType> {
        Self::ALL.get(index).copied()
    }

    pub fn mark(self) -> &'static str {
        match self {
            ChartType::Scatter => "point",
            ChartType::Bar => "bar",
            ChartType::Line => "line",
            ChartType::Pie => "arc",
            ChartType::Area => "area",
        }
    }
}

impl std::str::FromStr for ChartType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "scatter" | "point" => Ok(ChartType::Scatter),
            "bar" => Ok(ChartType::Bar),
            "line" => Ok(ChartType::Line),
            "pie" | "arc" => Ok(ChartType::Pie),
            "area" => Ok(ChartType::Area),
            other => Err(Error::InvalidChart(format!("unknown chart type {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    X,
    Y,
    Color,
    Size,
    Column,
    Row,
    Theta,
}

impl Channel {
    pub fn as_str(self) -> &'static str {
        match self {
            Channel::X => "x",
            Channel::Y => "y",
            Channel::Color => "color",
            Channel::Size => "size",
            Channel::Column => "column",
            Channel::Row => "row",
            Channel::Theta => "theta",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    Bin,
    Mean,
    Sum,
    Count,
}

/// One channel's field binding. `field: None` is only valid with a count
/// aggregate (a count of records).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Encoding {
    pub field: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<Transform>,
}

impl Encoding {
    fn field(index: usize) -> Self {
        Encoding {
            field: Some(index),
            transform: None,
        }
    }

    fn with(index: usize, transform: Transform) -> Self {
        Encoding {
            field: Some(index),
            transform: Some(transform),
        }
    }

    fn count() -> Self {
        Encoding {
            field: None,
            transform: Some(Transform::Count),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChartSpec {
    pub columns: BTreeSet<usize>,
    pub chart_type: ChartType,
    pub encodings: BTreeMap<Channel, Encoding>,
}

/// Header names and types: everything the encoding heuristics and the
/// Vega-Lite emitter need from a table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSchema {
    pub headers: Vec<String>,
    pub types: Vec<DataType>,
}

impl From<&DataTable> for TableSchema {
    fn from(table: &DataTable) -> Self {
        TableSchema {
            headers: table.columns.iter().map(|c| c.header.clone()).collect(),
            types: table.columns.iter().map(|c| c.inferred_type).collect(),
        }
    }
}

impl From<&TableSummary> for TableSchema {
    fn from(summary: &TableSummary) -> Self {
        TableSchema {
            headers: summary.columns.iter().map(|c| c.header.clone()).collect(),
            types: summary.columns.iter().map(|c| c.data_type).collect(),
        }
    }
}

impl TableSchema {
    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }
}

fn check_columns(columns: &BTreeSet<usize>, n_columns: usize) -> Result<()> {
    if columns.is_empty() || columns.len() > MAX_CHART_COLUMNS {
        return Err(Error::Cardinality(columns.len()));
    }
    if let Some(&index) = columns.iter().find(|&&i| i >= n_columns) {
        return Err(Error::Index {
            index,
            len: n_columns,
        });
    }
    Ok(())
}

impl ChartSpec {
    /// Checks the structural invariants against a table of `n_columns`.
    pub fn validate(&self, n_columns: usize) -> Result<()> {
        check_columns(&self.columns, n_columns)?;
        let mut encoded = BTreeSet::new();
        for (channel, enc) in &self.encodings {
            match (enc.field, enc.transform) {
                (None, Some(Transform::Count)) => {}
                (None, _) => {
                    return Err(Error::InvalidChart(format!(
                        "channel {} has no field",
                        channel.as_str()
                    )))
                }
                (Some(_), Some(Transform::Count)) => {
                    return Err(Error::InvalidChart("count aggregate takes no field".into()))
                }
                (Some(f), _) => {
                    if !self.columns.contains(&f) {
                        return Err(Error::InvalidChart(format!(
                            "channel {} encodes column {f} outside the chart",
                            channel.as_str()
                        )));
                    }
                    encoded.insert(f);
                }
            }
        }
        if encoded != self.columns {
            return Err(Error::InvalidChart("every chart column must be encoded".into()));
        }
        let pie = self.chart_type == ChartType::Pie;
        if pie && !self.encodings.contains_key(&Channel::Theta) {
            return Err(Error::InvalidChart("pie charts need a theta channel".into()));
        }
        if !pie && self.encodings.contains_key(&Channel::Theta) {
            return Err(Error::InvalidChart("theta is only valid for pie charts".into()));
        }
        if !pie && !self.encodings.contains_key(&Channel::X) {
            return Err(Error::InvalidChart("x channel is required".into()));
        }
        Ok(())
    }
}

/// Deterministic encoding heuristics.
///
/// Dimensions (everything but quantitative) fill x first, measures fill y;
/// for line and area charts a temporal dimension is preferred for x. A
/// selection without measures plots a record count on y; one without
/// dimensions puts the first measure on x (binned for bars). Leftover
/// dimensions take color, column, row; leftover measures take size, then
/// whatever remains. Pie charts put the category on color and the measure
/// (or count) on theta.
pub fn assign_encodings(
    schema: &TableSchema,
    columns: &BTreeSet<usize>,
    chart_type: ChartType,
) -> Result<ChartSpec> {
    check_columns(columns, schema.len())?;
    let mut dims: Vec<usize> = columns
        .iter()
        .copied()
        .filter(|&i| !schema.types[i].is_measure())
        .collect();
    let measures: Vec<usize> = columns
        .iter()
        .copied()
        .filter(|&i| schema.types[i].is_measure())
        .collect();
    if matches!(chart_type, ChartType::Line | ChartType::Area) {
        if let Some(pos) = dims.iter().position(|&i| schema.types[i] == DataType::Temporal) {
            let temporal = dims.remove(pos);
            dims.insert(0, temporal);
        }
    }

    let mut encodings = BTreeMap::new();
    let (rest_dims, rest_measures): (&[usize], &[usize]);
    if chart_type == ChartType::Pie {
        let aggregate = |m: Option<&usize>| m.map_or(Encoding::count(), |&m| Encoding::with(m, Transform::Sum));
        if let Some((&first, rest)) = dims.split_first() {
            encodings.insert(Channel::Color, Encoding::field(first));
            encodings.insert(Channel::Theta, aggregate(measures.first()));
            rest_dims = rest;
            rest_measures = measures.get(1..).unwrap_or(&[]);
        } else {
            encodings.insert(Channel::Color, Encoding::with(measures[0], Transform::Bin));
            encodings.insert(Channel::Theta, aggregate(measures.get(1)));
            rest_dims = &[];
            rest_measures = measures.get(2..).unwrap_or(&[]);
        }
    } else if let Some((&first, rest)) = dims.split_first() {
        encodings.insert(Channel::X, Encoding::field(first));
        let y = match measures.first() {
            Some(&m) if chart_type == ChartType::Scatter => Encoding::field(m),
            Some(&m) => Encoding::with(m, Transform::Mean),
            None => Encoding::count(),
        };
        encodings.insert(Channel::Y, y);
        rest_dims = rest;
        rest_measures = measures.get(1..).unwrap_or(&[]);
    } else {
        let binned = chart_type == ChartType::Bar;
        let x = if binned {
            Encoding::with(measures[0], Transform::Bin)
        } else {
            Encoding::field(measures[0])
        };
        encodings.insert(Channel::X, x);
        let y = match measures.get(1) {
            Some(&m) if binned => Encoding::with(m, Transform::Mean),
            Some(&m) => Encoding::field(m),
            None => Encoding::count(),
        };
        encodings.insert(Channel::Y, y);
        rest_dims = &[];
        rest_measures = measures.get(2..).unwrap_or(&[]);
    }

    let (dim_slots, measure_slots): (&[Channel], &[Channel]) = if chart_type == ChartType::Pie {
        (
            &[Channel::Column, Channel::Row, Channel::Size],
            &[Channel::Size, Channel::Column, Channel::Row],
        )
    } else {
        (
            &[Channel::Color, Channel::Column, Channel::Row, Channel::Size],
            &[Channel::Size, Channel::Color, Channel::Column, Channel::Row],
        )
    };
    let leftovers = rest_dims
        .iter()
        .map(|&c| (c, dim_slots))
        .chain(rest_measures.iter().map(|&c| (c, measure_slots)));
    for (column, slots) in leftovers {
        let slot = slots
            .iter()
            .copied()
            .find(|s| !encodings.contains_key(s))
            .expect("at most three leftover columns for four free channels");
        encodings.insert(slot, Encoding::field(column));
    }

    let spec = ChartSpec {
        columns: columns.clone(),
        chart_type,
        encodings,
    };
    debug_assert!(spec.validate(schema.len()).is_ok());
    Ok(spec)
}

/// Convenience wrapper over [`assign_encodings`] for a parsed table.
pub fn assign_encodings_for(
    table: &DataTable,
    columns: &BTreeSet<usize>,
    chart_type: ChartType,
) -> Result<ChartSpec> {
    assign_encodings(&TableSchema::from(table), columns, chart_type)
}

fn vegalite_type(data_type: DataType) -> &'static str {
    match data_type {
        DataType::Quantitative => "quantitative",
        DataType::Ordinal => "ordinal",
        DataType::Temporal => "temporal",
        DataType::Nominal | DataType::Boolean => "nominal",
    }
}

/// Vega-Lite treats `.`, `[` and `]` in field names as accessors.
fn escape_field(header: &str) -> String {
    let mut out = String::with_capacity(header.len());
    for c in header.chars() {
        if matches!(c, '.' | '[' | ']' | '\\') {
            out.push('\\');
        }
        out.push(c);
    }
    out
}

/// Vega-Lite v5 unit spec as a JSON value; data is a named source that the
/// caller fills in.
pub fn vegalite_value(spec: &ChartSpec, schema: &TableSchema) -> Value {
    let mut encoding = Map::new();
    for (channel, enc) in &spec.encodings {
        let mut def = Map::new();
        match enc.field {
            Some(f) => {
                let header = schema.headers.get(f).map(String::as_str).unwrap_or("");
                def.insert("field".into(), Value::String(escape_field(header)));
                let ty = match enc.transform {
                    Some(Transform::Mean | Transform::Sum) => "quantitative",
                    _ => vegalite_type(schema.types[f]),
                };
                def.insert("type".into(), Value::String(ty.into()));
            }
            None => {
                def.insert("type".into(), Value::String("quantitative".into()));
            }
        }
        match enc.transform {
            Some(Transform::Bin) => {
                def.insert("bin".into(), Value::Bool(true));
            }
            Some(Transform::Mean) => {
                def.insert("aggregate".into(), "mean".into());
            }
            Some(Transform::Sum) => {
                def.insert("aggregate".into(), "sum".into());
            }
            Some(Transform::Count) => {
                def.insert("aggregate".into(), "count".into());
            }
            None => {}
        }
        encoding.insert(channel.as_str().into(), Value::Object(def));
    }
    json!({
        "$schema": "https://vega.github.io/schema/vega-lite/v5.json",
        "data": {"name": "table"},
        "mark": spec.chart_type.mark(),
        "encoding": encoding,
    })
}

/// Canonical (sorted keys, compact) Vega-Lite JSON text.
pub fn emit_vegalite(spec: &ChartSpec, schema: &TableSchema) -> String {
    vegalite_value(spec, schema).to_string()
}

/// Equivalence key used for deduplication.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChartIdentity {
    pub columns: Vec<usize>,
    pub chart_type: Option<ChartType>,
}

/// With `drop_alternative_types` set, charts over the same columns are the
/// same chart regardless of type.
pub fn chart_identity(spec: &ChartSpec, drop_alternative_types: bool) -> ChartIdentity {
    ChartIdentity {
        columns: spec.columns.iter().copied().collect(),
        chart_type: (!drop_alternative_types).then_some(spec.chart_type),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use DataType::*;

    fn schema(types: &[DataType]) -> TableSchema {
        TableSchema {
            headers: (0..types.len()).map(|i| ((b'A' + i as u8) as char).to_string()).collect(),
            types: types.to_vec(),
        }
    }

    fn set(cols: &[usize]) -> BTreeSet<usize> {
        cols.iter().copied().collect()
    }

    fn field(spec: &ChartSpec, channel: Channel) -> Option<Encoding> {
        spec.encodings.get(&channel).copied()
    }

    #[test]
    fn nominal_goes_to_x_measure_to_y() {
        let s = schema(&[Nominal, Quantitative]);
        let spec = assign_encodings(&s, &set(&[0, 1]), ChartType::Bar).unwrap();
        assert_eq!(field(&spec, Channel::X).unwrap().field, Some(0));
        assert_eq!(field(&spec, Channel::Y).unwrap().field, Some(1));
    }

    #[test]
    fn lone_measure_bar_is_histogram() {
        let s = schema(&[Quantitative]);
        let spec = assign_encodings(&s, &set(&[0]), ChartType::Bar).unwrap();
        assert_eq!(field(&spec, Channel::X), Some(Encoding::with(0, Transform::Bin)));
        assert_eq!(field(&spec, Channel::Y), Some(Encoding::count()));
    }

    #[test]
    fn line_fill_order() {
        let s = schema(&[Nominal, Quantitative, Nominal]);
        let spec = assign_encodings(&s, &set(&[0, 1, 2]), ChartType::Line).unwrap();
        assert_eq!(field(&spec, Channel::X).unwrap().field, Some(0));
        assert_eq!(field(&spec, Channel::Y).unwrap().field, Some(1));
        assert_eq!(field(&spec, Channel::Color).unwrap().field, Some(2));
        assert_eq!(spec.encodings.len(), 3);
    }

    #[test]
    fn line_prefers_temporal_x() {
        let s = schema(&[Nominal, Temporal, Quantitative]);
        let spec = assign_encodings(&s, &set(&[0, 1, 2]), ChartType::Line).unwrap();
        assert_eq!(field(&spec, Channel::X).unwrap().field, Some(1));
        assert_eq!(field(&spec, Channel::Color).unwrap().field, Some(0));
        let bar = assign_encodings(&s, &set(&[0, 1, 2]), ChartType::Bar).unwrap();
        assert_eq!(field(&bar, Channel::X).unwrap().field, Some(0));
    }

    #[test]
    fn pie_maps_category_and_angle() {
        let s = schema(&[Nominal, Quantitative]);
        let spec = assign_encodings(&s, &set(&[0, 1]), ChartType::Pie).unwrap();
        assert_eq!(field(&spec, Channel::Color).unwrap().field, Some(0));
        assert_eq!(field(&spec, Channel::Theta), Some(Encoding::with(1, Transform::Sum)));
        let v = vegalite_value(&spec, &s);
        assert_eq!(v["mark"], "arc");
        assert_eq!(v["encoding"]["theta"]["field"], "B");
        assert_eq!(v["encoding"]["color"]["field"], "A");
    }

    /// Every mix of dimension/measure over 1-4 columns, for every type.
    #[test]
    fn assignment_is_total() {
        for k in 1..=4usize {
            for mask in 0..(1u32 << k) {
                for dim_type in [Nominal, Ordinal, Temporal, Boolean] {
                    let types: Vec<DataType> = (0..k)
                        .map(|i| if mask >> i & 1 == 1 { Quantitative } else { dim_type })
                        .collect();
                    let s = schema(&types);
                    let cols: BTreeSet<usize> = (0..k).collect();
                    for ct in ChartType::ALL {
                        let spec = assign_encodings(&s, &cols, ct).unwrap();
                        spec.validate(k).unwrap();
                        assert_eq!(spec.chart_type, ct);
                        let v = vegalite_value(&spec, &s);
                        assert_eq!(v["mark"], ct.mark());
                    }
                }
            }
        }
    }

    #[test]
    fn scatter_golden() {
        let s = schema(&[Quantitative, Quantitative]);
        let spec = assign_encodings(&s, &set(&[0, 1]), ChartType::Scatter).unwrap();
        assert_eq!(
            emit_vegalite(&spec, &s),
            r#"{"$schema":"https://vega.github.io/schema/vega-lite/v5.json","data":{"name":"table"},"encoding":{"x":{"field":"A","type":"quantitative"},"y":{"field":"B","type":"quantitative"}},"mark":"point"}"#
        );
    }

    #[test]
    fn bar_count_golden() {
        let s = TableSchema {
            headers: vec!["a.b".into()],
            types: vec![Boolean],
        };
        let spec = assign_encodings(&s, &set(&[0]), ChartType::Bar).unwrap();
        assert_eq!(
            emit_vegalite(&spec, &s),
            r#"{"$schema":"https://vega.github.io/schema/vega-lite/v5.json","data":{"name":"table"},"encoding":{"x":{"field":"a\\.b","type":"nominal"},"y":{"aggregate":"count","type":"quantitative"}},"mark":"bar"}"#
        );
    }

    #[test]
    fn emission_is_byte_stable() {
        let s = schema(&[Nominal, Quantitative, Ordinal, Quantitative]);
        let spec = assign_encodings(&s, &set(&[0, 1, 2, 3]), ChartType::Area).unwrap();
        assert_eq!(emit_vegalite(&spec, &s), emit_vegalite(&spec.clone(), &s));
    }

    #[test]
    fn identity_rules() {
        let s = schema(&[Nominal, Quantitative]);
        let bar = assign_encodings(&s, &set(&[0, 1]), ChartType::Bar).unwrap();
        let line = assign_encodings(&s, &set(&[1, 0]), ChartType::Line).unwrap();
        assert_eq!(chart_identity(&bar, true), chart_identity(&line, true));
        assert_ne!(chart_identity(&bar, false), chart_identity(&line, false));
        let bar2 = assign_encodings(&s, &set(&[1, 0]), ChartType::Bar).unwrap();
        assert_eq!(chart_identity(&bar, false), chart_identity(&bar2, false));
    }

    #[test]
    fn validation_rejects_broken_specs() {
        let s = schema(&[Nominal, Quantitative]);
        let mut spec = assign_encodings(&s, &set(&[0, 1]), ChartType::Bar).unwrap();
        spec.encodings.remove(&Channel::X);
        assert!(spec.validate(2).is_err());
        let mut spec = assign_encodings(&s, &set(&[0, 1]), ChartType::Bar).unwrap();
        spec.columns.insert(5);
        assert!(matches!(spec.validate(2), Err(Error::Index { .. })));
        let mut spec = assign_encodings(&s, &set(&[0, 1]), ChartType::Bar).unwrap();
        spec.encodings.insert(Channel::Theta, Encoding::count());
        assert!(spec.validate(2).is_err());
        assert!(matches!(
            assign_encodings(&s, &set(&[]), ChartType::Bar),
            Err(Error::Cardinality(0))
        ));
    }

    #[test]
    fn chart_type_parsing() {
        assert_eq!("Bar".parse::<ChartType>().unwrap(), ChartType::Bar);
        assert_eq!("point".parse::<ChartType>().unwrap(), ChartType::Scatter);
        assert!("donut".parse::<ChartType>().is_err());
    }
}
