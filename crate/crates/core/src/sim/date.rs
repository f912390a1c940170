use alloc::string::{String, ToString};

use chrono::{Datelike, Days, NaiveDate, Weekday};

pub fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").ok()
}

pub fn weekday_name(d: NaiveDate) -> &'static str {
    match d.weekday() {
        Weekday::Mon => "Mon",
        Weekday::Tue => "Tue",
        Weekday::Wed => "Wed",
        Weekday::Thu => "Thu",
        Weekday::Fri => "Fri",
        Weekday::Sat => "Sat",
        Weekday::Sun => "Sun",
    }
}

/// The given weekday within the Monday-based week containing `today`.
pub fn this_weekday(today: &str, day: Weekday) -> Option<String> {
    let d = parse_date(today)?;
    let monday = d.checked_sub_days(Days::new(u64::from(d.weekday().num_days_from_monday())))?;
    let target = monday.checked_add_days(Days::new(u64::from(day.num_days_from_monday())))?;
    Some(target.format("%Y-%m-%d").to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_week() {
        let d = parse_date("2024-10-16").unwrap();
        assert_eq!(weekday_name(d), "Wed");
        assert_eq!(this_weekday("2024-10-16", Weekday::Sat).unwrap(), "2024-10-19");
        assert_eq!(this_weekday("2024-10-19", Weekday::Sat).unwrap(), "2024-10-19");
        assert!(parse_date("2024-13-01").is_none());
    }
}
